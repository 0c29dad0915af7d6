"""Prediction quality metrics and result exports.

Velocity fields are compared with per-sample relative L2 error and with
mean local SSIM computed on fields affinely rescaled by the physical
range (1500, 4500) m/s, so SSIM always sees data_range 1 regardless of
each sample's actual extrema. Aggregates use population statistics.

Export formats consumed downstream:

* scores CSV: sample,condition,rel_l2,ssim
* loss history CSV (written by training): epoch,train_mse,val_rel_l2_mean,val_rel_l2_std
* trajectory CSV: run,iteration,misfit
* field stacks: float32 NPY (n, nz, nx)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .deeponet import DeepONet
from .fields import Grid2D, ShotGatherSet, Stage
from .npyio import write_npy
from .preprocess import (
    CorruptionSpec,
    NormalizationStats,
    apply_corruption,
    gain_log1p,
    normalize,
)

RESCALE_LO = 1500.0
RESCALE_HI = 4500.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def relative_l2(truth: np.ndarray, pred: np.ndarray) -> float:
    t = np.asarray(truth, dtype=np.float64).ravel()
    p = np.asarray(pred, dtype=np.float64).ravel()
    denom = np.linalg.norm(t)
    if denom == 0:
        raise ValueError("relative L2 undefined for an all-zero reference")
    return float(np.linalg.norm(t - p) / denom)


def rescale_velocity(v: np.ndarray, lo: float = RESCALE_LO, hi: float = RESCALE_HI) -> np.ndarray:
    return (np.asarray(v, dtype=np.float64) - lo) / (hi - lo)


def ssim(truth: np.ndarray, pred: np.ndarray, data_range: float = 1.0) -> float:
    """Mean local SSIM with a Gaussian window (width 11, sigma 1.5).

    Local moments come from Gaussian filtering (population covariances);
    a half-window border is discarded before averaging so padded edges
    never contribute. Inputs smaller than the window are rejected.
    """
    x = np.asarray(truth, dtype=np.float64)
    y = np.asarray(pred, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("ssim inputs must share a shape")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs at least {SSIM_WINDOW} pixels per axis")
    pad = SSIM_WINDOW // 2
    # truncate chosen so the kernel footprint is exactly the window width
    trunc = pad / SSIM_SIGMA

    def f(a):
        return gaussian_filter(a, SSIM_SIGMA, truncate=trunc)

    mx, my = f(x), f(y)
    vx = f(x * x) - mx * mx
    vy = f(y * y) - my * my
    cxy = f(x * y) - mx * my
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    smap = num / den
    interior = smap[pad:-pad, pad:-pad]
    return float(interior.mean())


def ssim_velocity(truth: np.ndarray, pred: np.ndarray) -> float:
    """SSIM of two velocity fields after rescaling by the physical range."""
    return ssim(rescale_velocity(truth), rescale_velocity(pred), data_range=1.0)


@dataclass(frozen=True)
class SampleScore:
    sample: int
    condition: str
    rel_l2: float
    ssim: float


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    scores: tuple[SampleScore, ...]

    @property
    def rel_l2_mean(self) -> float:
        return float(np.mean([s.rel_l2 for s in self.scores]))

    @property
    def rel_l2_std(self) -> float:
        return float(np.std([s.rel_l2 for s in self.scores]))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean([s.ssim for s in self.scores]))


def evaluate_condition(
    model: DeepONet,
    stats: NormalizationStats,
    raw_gathers: np.ndarray,
    truth_fields: np.ndarray,
    grid: Grid2D,
    corruption: CorruptionSpec,
    condition: str,
    dt: float = 1.0e-3,
    batch: int = 8,
) -> tuple[ConditionReport, np.ndarray]:
    """Corrupt, condition, predict and score a test set.

    raw_gathers: (N, S, R, nt) float32 raw traces. Returns the report and
    the predicted fields (N, nz, nx).
    """
    n = raw_gathers.shape[0]
    prepped = np.empty_like(raw_gathers)
    for i in range(n):
        g = ShotGatherSet(raw_gathers[i], Stage.RAW)
        spec_i = CorruptionSpec(
            noise_sigma=corruption.noise_sigma,
            masked_receivers=corruption.masked_receivers,
            seed=corruption.seed + i,
            cutoff_hz=corruption.cutoff_hz,
            use_abs_max=corruption.use_abs_max,
        )
        g = apply_corruption(g, spec_i, dt=dt)
        prepped[i] = normalize(gain_log1p(g), stats).data
    preds = np.empty((n, grid.nz, grid.nx), dtype=np.float32)
    for lo in range(0, n, batch):
        preds[lo:lo + batch] = model.predict_velocity(prepped[lo:lo + batch], grid)
    scores = tuple(
        SampleScore(
            sample=i,
            condition=condition,
            rel_l2=relative_l2(truth_fields[i], preds[i]),
            ssim=ssim_velocity(truth_fields[i], preds[i]),
        )
        for i in range(n)
    )
    return ConditionReport(condition=condition, scores=scores), preds


def write_scores_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "condition", "rel_l2", "ssim"])
        for report in reports:
            for s in report.scores:
                w.writerow([s.sample, s.condition, f"{s.rel_l2:.8f}", f"{s.ssim:.8f}"])


def write_trajectory_csv(path, runs: dict[str, list[float]]) -> None:
    """runs maps a run label to its per-iteration misfit sequence."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "iteration", "misfit"])
        for label, misfits in runs.items():
            for i, j in enumerate(misfits):
                w.writerow([label, i, f"{j:.10e}"])


def write_field_stack(path, fields: np.ndarray) -> None:
    arr = np.asarray(fields, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    write_npy(path, arr)


def write_trace_stack(path, gathers: ShotGatherSet | np.ndarray) -> None:
    data = gathers.data if isinstance(gathers, ShotGatherSet) else np.asarray(gathers)
    write_npy(path, np.asarray(data, dtype=np.float32))
