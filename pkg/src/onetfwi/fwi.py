"""Adjoint-state full-waveform inversion on the scalar solver.

The gradient is the exact transpose of the discrete forward recursion

    u[n+1] = d * (2 u[n] - v[n] + k * (L u[n] + f[n]))
    v[n+1] = d * u[n]

with k = (c dt)^2 per padded cell, d the sponge taper and L the symmetric
Laplacian from the forward module. Reverse accumulation against the stored
wavefield movie gives dJ/dk; chaining through k = (c dt)^2 and the
edge-replicating pad yields dJ/dc on the interior grid. Because every
backward step reuses the forward's own operators, the gradient matches
finite differences of the discrete misfit to solver precision rather than
to discretization error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .fields import AcquisitionGeometry, ShotGatherSet, Stage, VelocityField
from .wavesim import (
    SimulationConfig,
    fold_velocity_grad,
    laplacian,
    simulate_scalar,
)

VEL_CLAMP = (1500.0, 4500.0)


@dataclass(frozen=True)
class FwiConfig:
    max_iters: int = 30
    step_init: float = 50.0
    armijo_c: float = 1.0e-4
    shrink: float = 0.5
    max_backtracks: int = 10
    clamp: tuple[float, float] = VEL_CLAMP
    smooth_sigma: float = 1.0
    stop_rel_drop: float = 1.0e-4
    stop_window: int = 5
    sim: SimulationConfig = field(
        default_factory=lambda: SimulationConfig(save_movie=False)
    )

    def __post_init__(self):
        if self.clamp[1] <= self.clamp[0]:
            raise ValueError("empty clamp interval")
        if self.step_init <= 0:
            raise ValueError("step_init must be positive")


@dataclass
class FwiResult:
    field: VelocityField
    misfits: list[float]
    stop_reason: str
    steps: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.misfits) - 1


def misfit(sim: ShotGatherSet, observed: ShotGatherSet) -> float:
    """Half the summed squared trace residual."""
    r = sim.data.astype(np.float64) - observed.data.astype(np.float64)
    return 0.5 * float((r * r).sum())


def misfit_and_gradient(
    field_: VelocityField,
    geom: AcquisitionGeometry,
    observed: ShotGatherSet,
    config: FwiConfig,
) -> tuple[float, np.ndarray]:
    """Misfit and its exact gradient with respect to interior velocities.

    Gradient smoothing (config.smooth_sigma) is applied afterwards as a
    separate regularization step; with sigma 0 the returned array is the
    raw adjoint gradient, the thing finite differences must reproduce.
    """
    sim_cfg = dataclasses.replace(config.sim, save_movie=True)
    res = simulate_scalar(field_, geom, sim_cfg)
    movie = res.movie
    layout = res.layout
    grid = field_.grid
    dz, dx, dt, nt = grid.dz, grid.dx, geom.dt, geom.nt
    dtype = config.sim.dtype

    resid = res.gathers.data.astype(np.float64) - observed.data.astype(np.float64)
    j = 0.5 * float((resid * resid).sum())
    resid = resid.astype(dtype)

    taper = res.taper.astype(dtype)
    k = res.csq_dt2.astype(dtype)
    wavelet = res.wavelet
    ns = geom.n_sources
    src_rows = geom.source_rows + layout.r0
    src_cols = geom.source_cols + layout.c0
    src = (np.arange(ns), src_rows, src_cols)
    rec = (geom.receiver_rows + layout.r0, geom.receiver_cols + layout.c0)
    cell = dz * dx

    lam = np.zeros((ns, layout.hp, layout.wp), dtype=dtype)
    mu = np.zeros_like(lam)
    kbar = np.zeros_like(lam)
    for n in reversed(range(nt)):
        lam[:, rec[0], rec[1]] += resid[:, :, n]
        abar = taper * lam
        kbar += abar * laplacian(movie[:, n], layout, dz, dx)
        kbar[src] += abar[src] * dtype(wavelet[n] / cell)
        lam = 2.0 * abar + laplacian(k * abar, layout, dz, dx) + taper * mu
        mu = -abar

    c_pad = np.sqrt(res.csq_dt2) / dt
    dj_dc_pad = kbar.sum(axis=0).astype(np.float64) * 2.0 * c_pad * dt**2
    grad = fold_velocity_grad(dj_dc_pad, layout)
    if config.smooth_sigma > 0:
        grad = gaussian_filter(grad, sigma=config.smooth_sigma)
    return j, grad


def _misfit_only(field_, geom, observed, config) -> float:
    res = simulate_scalar(field_, geom, config.sim)
    return misfit(res.gathers, observed)


def invert(
    observed: ShotGatherSet,
    geom: AcquisitionGeometry,
    start: VelocityField,
    config: FwiConfig = FwiConfig(),
) -> FwiResult:
    """Projected steepest descent with Armijo backtracking.

    The descent direction is the negative gradient scaled to unit max
    magnitude, so step lengths are in m/s. Updates are clamped to
    config.clamp. Stops on the iteration budget, a stalled line search, a
    vanishing gradient, or when the relative misfit drop over the stop
    window falls below stop_rel_drop.
    """
    observed.require_stage(Stage.RAW, Stage.CORRUPTED)
    lo, hi = config.clamp
    m = np.clip(start.values.astype(np.float64), lo, hi)
    grid = start.grid
    j, grad = misfit_and_gradient(VelocityField(grid, m), geom, observed, config)
    misfits = [j]
    steps: list[float] = []
    reason = "max_iters"
    step = config.step_init

    for _ in range(config.max_iters):
        if j == 0.0:
            reason = "zero_misfit"
            break
        gmax = float(np.abs(grad).max())
        if gmax == 0.0:
            reason = "zero_gradient"
            break
        direction = -grad / gmax
        step = min(config.step_init, 2.0 * steps[-1]) if steps else config.step_init
        accepted = False
        for _ in range(config.max_backtracks):
            trial = np.clip(m + step * direction, lo, hi)
            j_trial = _misfit_only(VelocityField(grid, trial), geom, observed, config)
            decrease = float((grad * (trial - m)).sum())
            if j_trial <= j + config.armijo_c * decrease and j_trial < j:
                accepted = True
                break
            step *= config.shrink
        if not accepted:
            reason = "linesearch_stalled"
            break
        m = trial
        steps.append(step)
        j, grad = misfit_and_gradient(VelocityField(grid, m), geom, observed, config)
        misfits.append(j)
        w = config.stop_window
        if len(misfits) > w:
            drop = (misfits[-1 - w] - misfits[-1]) / max(misfits[-1 - w], 1e-300)
            if drop < config.stop_rel_drop:
                reason = "converged"
                break

    return FwiResult(
        field=VelocityField(grid, m.astype(np.float32)),
        misfits=misfits,
        stop_reason=reason,
        steps=steps,
    )


@dataclass
class HybridResult:
    informed: FwiResult
    baseline: FwiResult


def hybrid_run(
    observed: ShotGatherSet,
    geom: AcquisitionGeometry,
    predicted_start: VelocityField,
    config: FwiConfig = FwiConfig(),
    homogeneous_speed: float = 3000.0,
) -> HybridResult:
    """Invert twice: once seeded by a network prediction, once from the
    conventional homogeneous guess."""
    baseline_start = VelocityField(
        predicted_start.grid,
        np.full(predicted_start.grid.shape, homogeneous_speed, dtype=np.float32),
    )
    informed = invert(observed, geom, predicted_start, config)
    baseline = invert(observed, geom, baseline_start, config)
    return HybridResult(informed=informed, baseline=baseline)
