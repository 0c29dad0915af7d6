"""Grids, velocity fields, acquisition layout, and shot-gather containers."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Stage(enum.Enum):
    """Processing stage of seismic traces.

    Stages only advance: RAW -> CORRUPTED -> GAINED -> NORMALIZED.
    Corruption is optional; gain may consume RAW directly.
    """

    RAW = "raw"
    CORRUPTED = "corrupted"
    GAINED = "gained"
    NORMALIZED = "normalized"


class PipelineOrderError(RuntimeError):
    """Raised when a trace transform is applied at the wrong stage."""


def _frozen_f32(values, shape=None) -> np.ndarray:
    out = np.asarray(values, dtype=np.float32)
    if shape is not None and out.shape != shape:
        raise ValueError(f"expected shape {shape}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError("array contains non-finite values")
    out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Grid2D:
    """Regular 2D grid. values[i, j] sits at depth i*dz, offset j*dx."""

    nz: int
    nx: int
    extent_z: float
    extent_x: float

    def __post_init__(self):
        if self.nz < 2 or self.nx < 2:
            raise ValueError("grid needs at least 2 points per axis")
        if self.extent_z <= 0 or self.extent_x <= 0:
            raise ValueError("extents must be positive")

    @property
    def dz(self) -> float:
        return self.extent_z / (self.nz - 1)

    @property
    def dx(self) -> float:
        return self.extent_x / (self.nx - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nz, self.nx)

    def normalized_coords(self) -> np.ndarray:
        """(nz*nx, 2) float32 array of (x, z) scaled to [0, 1], row-major.

        This is the single source of truth for how field pixels map to
        network query points; every consumer flattens fields the same way.
        """
        zz, xx = np.meshgrid(
            np.linspace(0.0, 1.0, self.nz, dtype=np.float32),
            np.linspace(0.0, 1.0, self.nx, dtype=np.float32),
            indexing="ij",
        )
        return np.stack([xx.ravel(), zz.ravel()], axis=1)


@dataclass(frozen=True)
class VelocityField:
    """Acoustic velocity model on a Grid2D, in m/s."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen_f32(self.values, self.grid.shape)
        if np.any(vals <= 0):
            raise ValueError("velocities must be positive")
        object.__setattr__(self, "values", vals)

    @property
    def vmin(self) -> float:
        return float(self.values.min())

    @property
    def vmax(self) -> float:
        return float(self.values.max())


def field_stats(f: VelocityField) -> dict:
    return {
        "min": f.vmin,
        "max": f.vmax,
        "mean": float(f.values.mean()),
    }


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Source/receiver layout plus recording parameters for one survey."""

    grid: Grid2D
    source_rows: np.ndarray
    source_cols: np.ndarray
    receiver_rows: np.ndarray
    receiver_cols: np.ndarray
    dt: float
    nt: int
    f0: float

    def __post_init__(self):
        for name in ("source_rows", "source_cols", "receiver_rows", "receiver_cols"):
            arr = np.asarray(getattr(self, name), dtype=np.intp).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.source_rows.shape != self.source_cols.shape:
            raise ValueError("source row/col arrays must match")
        if self.receiver_rows.shape != self.receiver_cols.shape:
            raise ValueError("receiver row/col arrays must match")
        for rows, cols in (
            (self.source_rows, self.source_cols),
            (self.receiver_rows, self.receiver_cols),
        ):
            if np.any(rows < 0) or np.any(rows >= self.grid.nz):
                raise ValueError("row index outside grid")
            if np.any(cols < 0) or np.any(cols >= self.grid.nx):
                raise ValueError("column index outside grid")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.nt < 1:
            raise ValueError("nt must be positive")
        if self.f0 <= 0:
            raise ValueError("f0 must be positive")

    @property
    def n_sources(self) -> int:
        return int(self.source_rows.size)

    @property
    def n_receivers(self) -> int:
        return int(self.receiver_rows.size)


@dataclass(frozen=True)
class ShotGatherSet:
    """Immutable stack of shot gathers, shape (n_sources, n_receivers, nt)."""

    data: np.ndarray
    stage: Stage = Stage.RAW

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError("gather data must be (n_sources, n_receivers, nt)")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def n_sources(self) -> int:
        return self.data.shape[0]

    @property
    def n_receivers(self) -> int:
        return self.data.shape[1]

    @property
    def nt(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray, stage: Stage) -> "ShotGatherSet":
        return ShotGatherSet(data=data, stage=stage)

    def require_stage(self, *allowed: Stage) -> None:
        if self.stage not in allowed:
            names = "/".join(s.value for s in allowed)
            raise PipelineOrderError(
                f"operation expects {names} traces, got {self.stage.value}"
            )


# Survey constants used throughout: 70x70 model covering 690 m x 690 m
# (10 m spacing), 5 surface sources, a receiver on every surface column,
# 1000 samples at 1 ms, 25 Hz source peak frequency.
DEFAULT_NZ = 70
DEFAULT_NX = 70
DEFAULT_EXTENT = 690.0
DEFAULT_DT = 1.0e-3
DEFAULT_NT = 1000
DEFAULT_F0 = 25.0
VEL_MIN = 1500.0
VEL_MAX = 4500.0


def make_survey_grid() -> Grid2D:
    return Grid2D(nz=DEFAULT_NZ, nx=DEFAULT_NX, extent_z=DEFAULT_EXTENT, extent_x=DEFAULT_EXTENT)


def make_survey_geometry(
    grid: Grid2D | None = None,
    n_sources: int = 5,
    dt: float = DEFAULT_DT,
    nt: int = DEFAULT_NT,
    f0: float = DEFAULT_F0,
) -> AcquisitionGeometry:
    """Surface acquisition: sources evenly spread, receivers on every column."""
    if grid is None:
        grid = make_survey_grid()
    src_cols = np.round(np.linspace(0, grid.nx - 1, n_sources)).astype(np.intp)
    rec_cols = np.arange(grid.nx, dtype=np.intp)
    return AcquisitionGeometry(
        grid=grid,
        source_rows=np.zeros(n_sources, dtype=np.intp),
        source_cols=src_cols,
        receiver_rows=np.zeros(grid.nx, dtype=np.intp),
        receiver_cols=rec_cols,
        dt=dt,
        nt=nt,
        f0=f0,
    )
