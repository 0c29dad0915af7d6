"""Acoustic finite-difference modeling on 2D velocity fields.

Two solvers share the boundary machinery:

* ``simulate_scalar`` integrates the second-order scalar wave equation
  with a three-level leapfrog scheme. Its update is kept strictly linear
  in the state (taper multiplies, symmetric Laplacian), which is what the
  inversion module relies on to build an exact discrete adjoint.
* ``simulate_first_order`` integrates the equivalent pressure/velocity
  system on a staggered grid, as an independent cross-check.

Boundaries: edge-replicated velocity padding, a Cerjan-style multiplicative
sponge on the sides/bottom, and optionally a free surface represented by a
zero-pressure plane one node above the surface row, so that sources and
receivers placed on row 0 see nonzero pressure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import AcquisitionGeometry, ShotGatherSet, Stage, VelocityField

SPONGE_WIDTH = 20
SPONGE_STRENGTH = 0.0053


class StabilityError(RuntimeError):
    """Time step violates the CFL bound for the requested scheme."""


class NumericalError(RuntimeError):
    """Simulation produced non-finite values."""


def ricker(t, f0: float, t0: float) -> np.ndarray:
    """Ricker pulse (1 - 2a^2) exp(-a^2), a = pi f0 (t - t0)."""
    a2 = (np.pi * f0 * (np.asarray(t, dtype=np.float64) - t0)) ** 2
    return (1.0 - 2.0 * a2) * np.exp(-a2)


def ricker_integral(t, f0: float, t0: float) -> np.ndarray:
    """Antiderivative of ``ricker``: (t - t0) exp(-a^2).

    Inject this into the pressure-rate equation of the first-order solver
    to reproduce the waveform of the scalar solver driven by ``ricker``.
    """
    t = np.asarray(t, dtype=np.float64)
    a2 = (np.pi * f0 * (t - t0)) ** 2
    return (t - t0) * np.exp(-a2)


def ricker_wavelet(nt: int, dt: float, f0: float) -> np.ndarray:
    """Ricker sampled at t_n = n dt with the usual delay t0 = 1/f0."""
    return ricker(np.arange(nt) * dt, f0, 1.0 / f0)


# CFL constants: dt_max = K / (c_max * sqrt(1/dx^2 + 1/dz^2)). K comes from
# the spectral radius of each stencil (order-4 scalar: 16/3 per axis).
_CFL_K = {
    ("scalar", 2): 1.0,
    ("scalar", 4): np.sqrt(3.0) / 2.0,
    ("staggered", 2): 1.0,
    ("staggered", 4): 6.0 / 7.0,
}


def stability_limit(c_max: float, dz: float, dx: float, scheme: str, order: int) -> float:
    try:
        k = _CFL_K[(scheme, order)]
    except KeyError:
        raise ValueError(f"no such scheme: {scheme} order {order}") from None
    return k / (c_max * np.sqrt(1.0 / dx**2 + 1.0 / dz**2))


def check_stability(c_max: float, dz: float, dx: float, dt: float,
                    scheme: str, order: int) -> None:
    limit = stability_limit(c_max, dz, dx, scheme, order)
    if dt > limit:
        raise StabilityError(
            f"dt={dt:g}s exceeds CFL limit {limit:g}s "
            f"({scheme} order {order}, c_max={c_max:g}, dz={dz:g}, dx={dx:g})"
        )


@dataclass(frozen=True)
class SimulationConfig:
    spatial_order: int = 4
    sponge_width: int = SPONGE_WIDTH
    sponge_strength: float = SPONGE_STRENGTH
    free_surface: bool = True
    save_movie: bool = False
    dtype: type = np.float32

    def __post_init__(self):
        if self.spatial_order not in (2, 4):
            raise ValueError("spatial_order must be 2 or 4")
        if self.sponge_width < 0:
            raise ValueError("sponge_width must be non-negative")


@dataclass(frozen=True)
class PadLayout:
    """Index bookkeeping for the padded computational arrays.

    Rows: [ghost | top sponge | interior | bottom sponge | ghost]; the top
    sponge band is empty under a free surface. Ghost cells hold permanent
    zeros except for the transient antisymmetric image row used by the
    order-4 free-surface Laplacian.
    """

    nz: int
    nx: int
    ghost: int
    top: int
    side: int
    free_surface: bool

    @property
    def hp(self) -> int:
        return self.ghost * 2 + self.top + self.nz + self.side

    @property
    def wp(self) -> int:
        return self.ghost * 2 + self.side * 2 + self.nx

    @property
    def r0(self) -> int:
        return self.ghost + self.top

    @property
    def c0(self) -> int:
        return self.ghost + self.side


def make_layout(grid_shape: tuple[int, int], config: SimulationConfig) -> PadLayout:
    nz, nx = grid_shape
    return PadLayout(
        nz=nz,
        nx=nx,
        ghost=config.spatial_order // 2,
        top=0 if config.free_surface else config.sponge_width,
        side=config.sponge_width,
        free_surface=config.free_surface,
    )


def pad_velocity(values: np.ndarray, layout: PadLayout) -> np.ndarray:
    """Edge-replicate the interior model over the sponge and ghost bands."""
    top = layout.ghost + layout.top
    bottom = layout.ghost + layout.side
    side = layout.ghost + layout.side
    return np.pad(values, ((top, bottom), (side, side)), mode="edge")


def fold_velocity_grad(grad_pad: np.ndarray, layout: PadLayout) -> np.ndarray:
    """Adjoint of ``pad_velocity``: sum padded-cell gradients onto the
    interior cells they replicate."""
    top = layout.ghost + layout.top
    side = layout.ghost + layout.side
    g = np.array(grad_pad, dtype=np.float64)
    g[top] += g[:top].sum(axis=0)
    g[top + layout.nz - 1] += g[top + layout.nz:].sum(axis=0)
    g = g[top:top + layout.nz]
    g[:, side] += g[:, :side].sum(axis=1)
    g[:, side + layout.nx - 1] += g[:, side + layout.nx:].sum(axis=1)
    return g[:, side:side + layout.nx]


def make_taper(layout: PadLayout, strength: float, dtype=np.float64) -> np.ndarray:
    """Per-cell damping factors exp(-(strength * depth)^2), depth counted in
    cells from the interior edge into the sponge. Corners compound."""
    prof = np.exp(-((strength * np.arange(1, layout.side + 1)) ** 2))
    rows = np.ones(layout.hp)
    cols = np.ones(layout.wp)
    rows[layout.r0 + layout.nz:layout.r0 + layout.nz + layout.side] = prof
    if not layout.free_surface:
        rows[layout.r0 - layout.side:layout.r0][::-1] = prof[: layout.side]
    cols[layout.c0 + layout.nx:layout.c0 + layout.nx + layout.side] = prof
    cols[layout.c0 - layout.side:layout.c0] = prof[::-1]
    return (rows[:, None] * cols[None, :]).astype(dtype)


def laplacian(u: np.ndarray, layout: PadLayout, dz: float, dx: float) -> np.ndarray:
    """Symmetric 2D Laplacian of a (S, Hp, Wp) stack with boundary rules.

    Free surface: pressure is antisymmetric about the plane one node above
    the interior, i.e. u(-1) = 0 and u(-2) = -u(0). The ghost image is
    written transiently and cleared again, so stored states always carry
    zero ghosts. With that convention the operator is self-adjoint, which
    the inversion gradient exploits.
    """
    g = layout.ghost
    image = layout.free_surface and g == 2
    if image:
        u[:, 0, :] = -u[:, 2, :]
    out = np.zeros_like(u)
    inner = out[:, g:-g, g:-g]
    if g == 1:
        inner[...] = (
            (u[:, 2:, 1:-1] - 2.0 * u[:, 1:-1, 1:-1] + u[:, :-2, 1:-1]) / dz**2
            + (u[:, 1:-1, 2:] - 2.0 * u[:, 1:-1, 1:-1] + u[:, 1:-1, :-2]) / dx**2
        )
    else:
        c = u[:, 2:-2, 2:-2]
        inner[...] = (
            -(u[:, 4:, 2:-2] + u[:, :-4, 2:-2])
            + 16.0 * (u[:, 3:-1, 2:-2] + u[:, 1:-3, 2:-2])
            - 30.0 * c
        ) / (12.0 * dz**2) + (
            -(u[:, 2:-2, 4:] + u[:, 2:-2, :-4])
            + 16.0 * (u[:, 2:-2, 3:-1] + u[:, 2:-2, 1:-3])
            - 30.0 * c
        ) / (12.0 * dx**2)
    if image:
        u[:, 0, :] = 0.0
    return out


@dataclass
class ScalarResult:
    gathers: ShotGatherSet
    movie: np.ndarray | None
    layout: PadLayout
    taper: np.ndarray
    csq_dt2: np.ndarray
    wavelet: np.ndarray


def _shot_indices(geom: AcquisitionGeometry, layout: PadLayout):
    s = np.arange(geom.n_sources)
    src = (s, geom.source_rows + layout.r0, geom.source_cols + layout.c0)
    rec = (geom.receiver_rows + layout.r0, geom.receiver_cols + layout.c0)
    return src, rec


def simulate_scalar(
    field: VelocityField,
    geom: AcquisitionGeometry,
    config: SimulationConfig = SimulationConfig(),
    wavelet: np.ndarray | None = None,
) -> ScalarResult:
    """Propagate every source through the model; record surface receivers.

    Returns raw gathers of shape (n_sources, n_receivers, nt). With
    ``config.save_movie`` the full padded wavefield history (nt + 1 frames
    per shot, frame 0 all zero) is kept for adjoint computations.
    """
    grid = field.grid
    layout = make_layout(grid.shape, config)
    dz, dx, dt, nt = grid.dz, grid.dx, geom.dt, geom.nt
    check_stability(field.vmax, dz, dx, dt, "scalar", config.spatial_order)
    dtype = config.dtype
    if wavelet is None:
        wavelet = ricker_wavelet(nt, dt, geom.f0)
    if len(wavelet) < nt:
        raise ValueError("wavelet shorter than nt")

    c_pad = pad_velocity(np.asarray(field.values, dtype=np.float64), layout)
    csq_dt2 = (c_pad * dt) ** 2
    taper = make_taper(layout, config.sponge_strength)
    src, rec = _shot_indices(geom, layout)
    src_k = csq_dt2[src[1], src[2]] / (dz * dx)

    csq_dt2 = csq_dt2.astype(dtype)
    taper_t = taper.astype(dtype)
    ns = geom.n_sources
    u = np.zeros((ns, layout.hp, layout.wp), dtype=dtype)
    v = np.zeros_like(u)
    gathers = np.empty((ns, geom.n_receivers, nt), dtype=np.float32)
    movie = None
    if config.save_movie:
        movie = np.zeros((ns, nt + 1, layout.hp, layout.wp), dtype=dtype)

    for n in range(nt):
        rhs = 2.0 * u - v + csq_dt2 * laplacian(u, layout, dz, dx)
        rhs[src] += (src_k * wavelet[n]).astype(dtype)
        u_next = taper_t * rhs
        v = taper_t * u
        u = u_next
        gathers[:, :, n] = u[:, rec[0], rec[1]]
        if movie is not None:
            movie[:, n + 1] = u

    if not np.all(np.isfinite(gathers)):
        raise NumericalError("scalar simulation diverged")
    return ScalarResult(
        gathers=ShotGatherSet(gathers, Stage.RAW),
        movie=movie,
        layout=layout,
        taper=taper,
        csq_dt2=(c_pad * dt) ** 2,
        wavelet=np.asarray(wavelet, dtype=np.float64),
    )


def simulate_first_order(
    field: VelocityField,
    geom: AcquisitionGeometry,
    config: SimulationConfig = SimulationConfig(),
    wavelet: np.ndarray | None = None,
    return_energy: bool = False,
):
    """Staggered-grid pressure/velocity solver (density 1).

    The source enters the pressure-rate equation, so to match waveforms
    from ``simulate_scalar`` pass the running integral of its wavelet
    (``ricker_integral`` for the default Ricker).

    With ``return_energy`` also returns the per-step field energy
    sum(p^2 / (2 c^2) + (vx^2 + vz^2) / 2), for dissipation checks.
    """
    grid = field.grid
    layout = make_layout(grid.shape, config)
    dz, dx, dt, nt = grid.dz, grid.dx, geom.dt, geom.nt
    check_stability(field.vmax, dz, dx, dt, "staggered", config.spatial_order)
    dtype = config.dtype
    if wavelet is None:
        wavelet = ricker_integral(np.arange(nt) * dt, geom.f0, 1.0 / geom.f0)

    c_pad = pad_velocity(np.asarray(field.values, dtype=np.float64), layout)
    k = (c_pad**2).astype(dtype)  # rho c^2 with rho = 1
    taper = make_taper(layout, config.sponge_strength).astype(dtype)
    src, rec = _shot_indices(geom, layout)
    src_k = (c_pad[src[1], src[2]] ** 2 * dt / (dz * dx)).astype(dtype)

    ns = geom.n_sources
    p = np.zeros((ns, layout.hp, layout.wp), dtype=dtype)
    vx = np.zeros((ns, layout.hp, layout.wp - 1), dtype=dtype)
    vz = np.zeros((ns, layout.hp - 1, layout.wp), dtype=dtype)
    gathers = np.empty((ns, geom.n_receivers, nt), dtype=np.float32)
    energy = np.empty(nt) if return_energy else None
    order = config.spatial_order
    image = layout.free_surface and layout.ghost == 2

    for n in range(nt):
        if image:
            p[:, 0, :] = -p[:, 2, :]
        if order == 2:
            vx += dt / dx * (p[:, :, 1:] - p[:, :, :-1])
            vz += dt / dz * (p[:, 1:, :] - p[:, :-1, :])
        else:
            vx[:, :, 1:-1] += dt / dx * (
                9.0 / 8.0 * (p[:, :, 2:-1] - p[:, :, 1:-2])
                - 1.0 / 24.0 * (p[:, :, 3:] - p[:, :, :-3])
            )
            vz[:, 1:-1, :] += dt / dz * (
                9.0 / 8.0 * (p[:, 2:-1, :] - p[:, 1:-2, :])
                - 1.0 / 24.0 * (p[:, 3:, :] - p[:, :-3, :])
            )
        if image:
            p[:, 0, :] = 0.0
        if order == 2:
            div = np.zeros_like(p)
            div[:, 1:-1, 1:-1] = (
                (vx[:, 1:-1, 1:] - vx[:, 1:-1, :-1]) / dx
                + (vz[:, 1:, 1:-1] - vz[:, :-1, 1:-1]) / dz
            )
        else:
            div = np.zeros_like(p)
            div[:, 2:-2, 2:-2] = (
                9.0 / 8.0 * (vx[:, 2:-2, 2:-1] - vx[:, 2:-2, 1:-2])
                - 1.0 / 24.0 * (vx[:, 2:-2, 3:] - vx[:, 2:-2, :-3])
            ) / dx + (
                9.0 / 8.0 * (vz[:, 2:-1, 2:-2] - vz[:, 1:-2, 2:-2])
                - 1.0 / 24.0 * (vz[:, 3:, 2:-2] - vz[:, :-3, 2:-2])
            ) / dz
        p += dt * k * div
        p[src] += src_k * dtype(wavelet[n])
        p *= taper
        vx *= taper[:, :-1]
        vz *= taper[:-1, :]
        gathers[:, :, n] = p[:, rec[0], rec[1]]
        if energy is not None:
            energy[n] = float(
                (p.astype(np.float64) ** 2 / (2.0 * k.astype(np.float64))).sum()
                + (vx.astype(np.float64) ** 2).sum() / 2.0
                + (vz.astype(np.float64) ** 2).sum() / 2.0
            )

    if not np.all(np.isfinite(gathers)):
        raise NumericalError("staggered simulation diverged")
    result = ShotGatherSet(gathers, Stage.RAW)
    if return_energy:
        return result, energy
    return result


def first_break_times(
    gathers: ShotGatherSet | np.ndarray,
    dt: float,
    threshold: float = 0.02,
) -> np.ndarray:
    """Per-trace first-break picks in seconds.

    A pick is the first crossing of threshold * max|trace|, refined by
    linear interpolation between the bracketing samples. Silent traces
    yield NaN. Absolute picks carry a wavelet-onset offset; comparisons
    should difference picks between receivers or between solvers.
    """
    data = gathers.data if isinstance(gathers, ShotGatherSet) else np.asarray(gathers)
    env = np.abs(data.astype(np.float64))
    out = np.full(env.shape[:-1], np.nan)
    flat_env = env.reshape(-1, env.shape[-1])
    flat_out = out.reshape(-1)
    for i, trace in enumerate(flat_env):
        level = threshold * trace.max()
        if level <= 0:
            continue
        above = np.nonzero(trace >= level)[0]
        if above.size == 0:
            continue
        n = above[0]
        if n == 0:
            flat_out[i] = 0.0
        else:
            frac = (level - trace[n - 1]) / (trace[n] - trace[n - 1])
            flat_out[i] = (n - 1 + frac) * dt
    return out
