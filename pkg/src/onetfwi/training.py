"""Dataset files, synthetic data generation, training loop, checkpoints.

On disk a dataset is NPY pairs plus a JSON manifest:

* data file: float32 (n, n_sources, nt, n_receivers) raw traces
* model file: float32 (n, 1, nz, nx) velocity fields in m/s
* manifest: {"version": 1, "pairs": [{"data": ..., "model": ..., "count": n}]}

In memory gathers are transposed to (n, n_sources, n_receivers, nt), the
orientation the network consumes.

A checkpoint is a JSON manifest next to a flat binary of little-endian
float32 parameter payloads, ordered as listed, so reload is bit exact.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .deeponet import DeepONet, ModelConfig
from .fields import Grid2D, ShotGatherSet, Stage, VelocityField, make_survey_geometry
from .npyio import read_npy, write_npy
from .preprocess import NormalizationStats, fit_normalization, gain_log1p, normalize
from .wavesim import SimulationConfig, simulate_scalar

MANIFEST_VERSION = 1
CHECKPOINT_FORMAT = "onetfwi-checkpoint"
COORD_CONVENTION = "xz-normalized-rowmajor"


class DataError(RuntimeError):
    """Dataset files missing, malformed, or inconsistent."""


# ---------------------------------------------------------------------------
# manifests and dataset IO

def write_manifest(path, pairs) -> None:
    doc = {
        "version": MANIFEST_VERSION,
        "pairs": [
            {"data": str(d), "model": str(m), "count": int(n)} for d, m, n in pairs
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_manifest(path) -> list[tuple[Path, Path, int]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"bad manifest JSON in {path}: {exc}") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version in {path}")
    out = []
    for pair in doc["pairs"]:
        out.append((path.parent / pair["data"], path.parent / pair["model"], pair["count"]))
    return out


def load_dataset(manifest_path, limit: int | None = None):
    """Returns (gathers (N, S, R, nt) float32 raw, fields (N, nz, nx) float32)."""
    gathers = []
    fields = []
    total = 0
    for data_path, model_path, _ in load_manifest(manifest_path):
        if not data_path.exists() or not model_path.exists():
            raise DataError(f"dataset file missing: {data_path} / {model_path}")
        d = read_npy(data_path)
        m = read_npy(model_path)
        if d.ndim != 4 or m.ndim != 4 or m.shape[1] != 1:
            raise DataError(f"unexpected dataset shapes {d.shape} / {m.shape}")
        if d.shape[0] != m.shape[0]:
            raise DataError("data/model sample counts disagree")
        gathers.append(np.ascontiguousarray(d.transpose(0, 1, 3, 2), dtype=np.float32))
        fields.append(m[:, 0].astype(np.float32))
        total += d.shape[0]
        if limit is not None and total >= limit:
            break
    if not gathers:
        raise DataError(f"empty dataset manifest: {manifest_path}")
    g = np.concatenate(gathers, axis=0)
    f = np.concatenate(fields, axis=0)
    if limit is not None:
        g, f = g[:limit], f[:limit]
    return g, f


# ---------------------------------------------------------------------------
# synthetic model family

def sample_layered_field(rng: np.random.Generator, grid: Grid2D,
                         vmin: float = 1500.0, vmax: float = 4500.0) -> VelocityField:
    """Flat layers with speed increasing downward, optionally broken by one
    vertical fault that throws the right block down a few cells.

    Layers are kept at least 10 cells thick and adjacent speeds at least a
    tenth of the range apart: hairline layers and invisible contrasts make
    the inverse problem ambiguous, which is noise, not signal, in a small
    training family.
    """
    nz, nx = grid.shape
    n_layers = int(rng.integers(2, 4))
    min_gap = (vmax - vmin) / 10.0
    while True:
        cuts = np.sort(rng.choice(np.arange(10, nz - 10), size=n_layers - 1,
                                  replace=False))
        if n_layers == 2 or np.diff(cuts).min() >= 10:
            break
    while True:
        speeds = np.sort(rng.uniform(vmin, vmax, size=n_layers))
        if np.diff(speeds).min() >= min_gap:
            break
    profile = np.empty(nz, dtype=np.float32)
    bounds = [0, *cuts.tolist(), nz]
    for v, lo, hi in zip(speeds, bounds[:-1], bounds[1:]):
        profile[lo:hi] = v
    values = np.tile(profile[:, None], (1, nx))
    if rng.random() < 0.5:
        col = int(rng.integers(nx // 4, 3 * nx // 4))
        throw = int(rng.integers(2, 5))
        shifted = np.concatenate([np.full(throw, profile[0], np.float32), profile])[:nz]
        values[:, col:] = shifted[:, None]
    return VelocityField(grid, values)


def make_toy_dataset(
    out_dir,
    n_samples: int,
    seed: int,
    prefix: str = "train",
    chunk: int = 500,
    sim_config: SimulationConfig | None = None,
    workers: int = 1,
) -> Path:
    """Simulate a synthetic dataset; returns the manifest path.

    Each sample is an independent layered field propagated with the scalar
    solver under the standard survey geometry.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    geom = make_survey_geometry()
    grid = geom.grid
    sim_config = sim_config or SimulationConfig()

    worker = _ToyWorker(seed, grid, geom, sim_config)
    indices = list(range(n_samples))
    if workers > 1:
        import multiprocessing as mp

        with mp.Pool(workers) as pool:
            samples = pool.map(worker, indices)
    else:
        samples = [worker(i) for i in indices]

    pairs = []
    for start in range(0, n_samples, chunk):
        part = samples[start:start + chunk]
        data = np.stack([s[0] for s in part]).astype(np.float32)
        models = np.stack([s[1] for s in part])[:, None].astype(np.float32)
        dname = f"{prefix}_data_{start // chunk}.npy"
        mname = f"{prefix}_model_{start // chunk}.npy"
        write_npy(out_dir / dname, data)
        write_npy(out_dir / mname, models)
        pairs.append((dname, mname, len(part)))
    manifest = out_dir / f"{prefix}_manifest.json"
    write_manifest(manifest, pairs)
    return manifest


class _ToyWorker:
    """Picklable per-sample generator for multiprocessing pools."""

    def __init__(self, seed, grid, geom, sim_config):
        self.seed = seed
        self.grid = grid
        self.geom = geom
        self.sim_config = sim_config

    def __call__(self, i: int):
        rng = np.random.default_rng([self.seed, i])
        fld = sample_layered_field(rng, self.grid)
        res = simulate_scalar(fld, self.geom, self.sim_config)
        return res.gathers.data.transpose(0, 2, 1), fld.values


# ---------------------------------------------------------------------------
# preprocessing into network-ready arrays

def preprocess_gathers(raw: np.ndarray, stats: NormalizationStats | None):
    """Gain (and on the training set, fit normalization), then normalize.

    raw: (N, S, R, nt) float32. Returns (normalized array, stats).
    """
    gained = np.empty_like(raw, dtype=np.float32)
    for i in range(raw.shape[0]):
        gained[i] = gain_log1p(ShotGatherSet(raw[i], Stage.RAW)).data
    if stats is None:
        stats = fit_normalization([gained])
    out = np.empty_like(gained)
    for i in range(gained.shape[0]):
        out[i] = normalize(ShotGatherSet(gained[i], Stage.GAINED), stats).data
    return out, stats


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1.0e-3
    lr_decay_factor: float = 1.0
    lr_decay_every: int = 0
    weight_decay: float = 0.0
    l2_start_epoch: int = 0
    seed: int = 0
    val_batch: int = 16
    val_every: int = 1
    max_seconds: float | None = None
    stop_at_val: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (0 < self.lr_decay_factor <= 1.0):
            raise ValueError("lr_decay_factor must be in (0, 1]")
        if self.val_every < 1:
            raise ValueError("val_every must be positive")


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_val: float = np.inf
    best_epoch: int = -1
    aborted: bool = False
    seconds: float = 0.0


def mean_rel_l2(model: DeepONet, gathers: np.ndarray, fields: np.ndarray,
                grid: Grid2D, batch: int = 16) -> tuple[float, float]:
    """Population mean/std of per-sample relative L2 errors."""
    errs = []
    for lo in range(0, gathers.shape[0], batch):
        pred = model.predict_velocity(gathers[lo:lo + batch], grid)
        truth = fields[lo:lo + batch]
        num = np.linalg.norm((truth - pred).reshape(len(pred), -1), axis=1)
        den = np.linalg.norm(truth.reshape(len(pred), -1), axis=1)
        errs.extend(num / den)
    errs = np.asarray(errs)
    return float(errs.mean()), float(errs.std())


def train(
    model: DeepONet,
    train_gathers: np.ndarray,
    train_fields: np.ndarray,
    val_gathers: np.ndarray,
    val_fields: np.ndarray,
    grid: Grid2D,
    config: TrainConfig,
    stats: NormalizationStats,
    out_dir,
) -> TrainResult:
    """Minimize MSE between predicted and true velocities.

    The trunk runs once per step over the full coordinate grid and is shared
    by the whole batch through the branch/trunk product. Checkpoints land in
    out_dir: best.{json,bin} tracks validation, last.{json,bin} every
    validation epoch (val_every controls the cadence, final epoch included).
    A non-finite loss aborts, leaving the last checkpoints in place.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    coords = grid.normalized_coords()
    n = train_gathers.shape[0]
    targets = train_fields.reshape(n, -1)
    opt = ag.Adam(model.parameters(), lr=config.lr, weight_decay=0.0)
    result = TrainResult()
    t0 = time.monotonic()

    for epoch in range(config.epochs):
        opt.weight_decay = (
            config.weight_decay if epoch >= config.l2_start_epoch else 0.0
        )
        if config.lr_decay_every and epoch and epoch % config.lr_decay_every == 0:
            opt.lr *= config.lr_decay_factor
        perm = np.random.default_rng([config.seed, epoch]).permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            opt.zero_grad()
            pred = model.scaled_output(train_gathers[idx], coords)
            loss = ag.mse_loss(pred, ag.Tensor(targets[idx]))
            lval = loss.item()
            if not np.isfinite(lval):
                result.aborted = True
                result.seconds = time.monotonic() - t0
                _write_history(out_dir / "loss_history.csv", result.history)
                return result
            loss.backward()
            opt.step()
            epoch_loss += lval * len(idx)
        if epoch % config.val_every == 0 or epoch == config.epochs - 1:
            val_mean, val_std = mean_rel_l2(
                model, val_gathers, val_fields, grid, config.val_batch
            )
            result.history.append(
                {
                    "epoch": epoch,
                    "train_mse": epoch_loss / n,
                    "val_rel_l2_mean": val_mean,
                    "val_rel_l2_std": val_std,
                }
            )
            save_checkpoint(out_dir / "last", model, stats, {"epoch": epoch})
            if val_mean < result.best_val:
                result.best_val = val_mean
                result.best_epoch = epoch
                save_checkpoint(out_dir / "best", model, stats, {"epoch": epoch})
            if config.stop_at_val is not None and result.best_val <= config.stop_at_val:
                break
        if config.max_seconds and time.monotonic() - t0 > config.max_seconds:
            break
    result.seconds = time.monotonic() - t0
    _write_history(out_dir / "loss_history.csv", result.history)
    return result


def _write_history(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(
            f, fieldnames=["epoch", "train_mse", "val_rel_l2_mean", "val_rel_l2_std"]
        )
        w.writeheader()
        for row in history:
            w.writerow(row)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(base, model: DeepONet, stats: NormalizationStats,
                    extra: dict | None = None) -> Path:
    """Write <base>.json + <base>.bin. Parameters are serialized as raw
    little-endian float32 in manifest order."""
    base = Path(base)
    entries = []
    offset = 0
    blobs = []
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "size": arr.size}
        )
        blobs.append(arr.tobytes())
        offset += arr.size * 4
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "model_config": model.config.to_dict(),
        "normalization": {"lo": stats.lo, "hi": stats.hi},
        "coord_convention": COORD_CONVENTION,
        "params": entries,
        "extra": extra or {},
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{base}.json").write_text(json.dumps(doc, indent=1))
    Path(f"{base}.bin").write_bytes(b"".join(blobs))
    return Path(f"{base}.json")


def load_checkpoint(path) -> tuple[DeepONet, NormalizationStats, dict]:
    """Accepts the .json path or the extension-less base path."""
    path = Path(path)
    if path.suffix == ".json":
        base = path.with_suffix("")
    else:
        base = path
    jpath, bpath = Path(f"{base}.json"), Path(f"{base}.bin")
    if not jpath.exists() or not bpath.exists():
        raise DataError(f"checkpoint files missing: {jpath} / {bpath}")
    doc = json.loads(jpath.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"not a checkpoint: {jpath}")
    config = ModelConfig.from_dict(doc["model_config"])
    model = DeepONet(config)
    blob = bpath.read_bytes()
    expected = sum(e["size"] for e in doc["params"]) * 4
    if len(blob) != expected:
        raise DataError(
            f"checkpoint blob is {len(blob)} bytes, manifest says {expected}"
        )
    for entry in doc["params"]:
        p = model.params.get(entry["name"])
        if p is None:
            raise DataError(f"checkpoint has unknown parameter {entry['name']}")
        raw = np.frombuffer(
            blob, dtype="<f4", count=entry["size"], offset=entry["offset"]
        ).reshape(entry["shape"])
        if tuple(p.data.shape) != tuple(raw.shape):
            raise DataError(f"shape mismatch for {entry['name']}")
        p.data = raw.copy()
    stats = NormalizationStats(**doc["normalization"])
    return model, stats, doc.get("extra", {})
