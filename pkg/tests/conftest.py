import numpy as np
import pytest

from obsgrid.geometry import DensityField, make_grid, project_box_mean
from obsgrid.spectral import build_model


@pytest.fixture(scope="session")
def d1d():
    return build_model("dirichlet_1d", 16)


@pytest.fixture(scope="session")
def grid1024(d1d):
    return make_grid(d1d.domain, 1024, 3)


@pytest.fixture(scope="session")
def grid512(d1d):
    return make_grid(d1d.domain, 512, 3)


@pytest.fixture(scope="session")
def torus():
    return build_model("torus_1d", 6)


@pytest.fixture(scope="session")
def torus_grid(torus):
    return make_grid(torus.domain, 1024, 3)


def interval_indicator(grid, lo, hi):
    """Cell-overlap fractions of the indicator of (lo, hi) on a 1D grid."""
    c = grid.centers[:, 0]
    h = grid.cell_measures[0]
    vals = np.clip((np.minimum(hi, c + h / 2) - np.maximum(lo, c - h / 2)) / h, 0.0, 1.0)
    return DensityField(grid, vals)


def random_feasible(grid, L, rng, smooth=False):
    """Random density in {0 <= a <= 1, mean = L} via projection."""
    if smooth:
        x = grid.centers[:, 0]
        v = sum(rng.standard_normal() * np.cos((k + 1) * x + rng.uniform(0, 2 * np.pi))
                for k in range(4))
    else:
        v = rng.uniform(-0.5, 1.5, size=grid.ncells)
    return project_box_mean(grid, v, L)
