import numpy as np
import pytest

from onetfwi.fields import AcquisitionGeometry, Grid2D, VelocityField


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_geometry(nz=12, nx=12, nt=150, dt=1e-3, f0=25.0, extent=110.0):
    """Small survey used by gradient and solver unit tests: one corner
    source, receivers along the surface."""
    grid = Grid2D(nz, nx, extent, extent)
    return AcquisitionGeometry(
        grid=grid,
        source_rows=np.array([0]),
        source_cols=np.array([nx // 2]),
        receiver_rows=np.zeros(nx, dtype=int),
        receiver_cols=np.arange(nx),
        dt=dt,
        nt=nt,
        f0=f0,
    )


def constant_field(grid: Grid2D, c: float) -> VelocityField:
    return VelocityField(grid, np.full(grid.shape, c, dtype=np.float32))
