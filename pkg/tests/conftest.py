import logging

import numpy as np
import pytest

from robust_fpca.log import AccumulatingLogHandler
from robust_fpca.metric_core import EuclideanSpace
from robust_fpca.trajectory import DistanceTrajectories, ObjectTrajectorySample, TimeGrid


def quadrature_orthonormal(grid, functions):
    """Rows of ``functions`` orthonormalized under the grid's trapezoidal inner product."""
    F = np.asarray(functions, dtype=float)
    gram = (F * grid.quad_weights) @ F.T
    L = np.linalg.cholesky(gram)
    return np.linalg.solve(L, F)


def fourier_triple(grid):
    t = grid.points
    return quadrature_orthonormal(grid, [
        np.sqrt(2.0) * np.sin(np.pi * t),
        np.sqrt(2.0) * np.sin(2.0 * np.pi * t),
        np.sqrt(2.0) * np.sin(3.0 * np.pi * t),
    ])


@pytest.fixture(scope="session")
def grid():
    return TimeGrid.uniform(21)


@pytest.fixture(scope="session")
def basis(grid):
    return fourier_triple(grid)


@pytest.fixture(scope="session")
def fine_grid():
    return TimeGrid.uniform(50)


@pytest.fixture(scope="session")
def fine_basis(fine_grid):
    return fourier_triple(fine_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_distances(grid, rng):
    def make(n):
        return DistanceTrajectories(grid, np.abs(rng.normal(1.0, 0.5, size=(n, len(grid)))))
    return make


@pytest.fixture
def low_rank_sample(grid, basis):
    """Euclidean 1-D trajectories 5 + sum_j a_ij phi_j(t): rank three around a positive baseline."""
    def make(n, seed=7, scales=(3.0, 2.0, 1.0), level=5.0):
        local = np.random.default_rng(seed)
        a = local.normal(size=(n, 3)) * np.asarray(scales)
        values = level + a @ basis
        return ObjectTrajectorySample(EuclideanSpace(1), grid, values[:, :, np.newaxis])
    return make


@pytest.fixture
def warnings_handler():
    handler = AccumulatingLogHandler()
    logging.getLogger().addHandler(handler)
    yield handler
    logging.getLogger().removeHandler(handler)
