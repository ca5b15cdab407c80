import numpy as np
import pytest
from hypothesis import settings

from deltanls import ModelParams, SpatialGrid
from deltanls.hamiltonian import hamiltonian_for
from deltanls.modulation import family_for

settings.register_profile("deltanls", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("deltanls")


@pytest.fixture(scope="session")
def params():
    return ModelParams(q=-1.0, p=4, mu=-1.0)


@pytest.fixture(scope="session")
def grid():
    return SpatialGrid(20.0, 1024)


@pytest.fixture(scope="session")
def big_grid():
    return SpatialGrid(40.0, 4096)


@pytest.fixture(scope="session")
def ham(grid):
    return hamiltonian_for(grid, -1.0)


@pytest.fixture(scope="session")
def family(params, grid):
    return family_for(params, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(rng, grid, scale=1.0, width=3.0):
    """Smooth random complex field concentrated near the origin."""
    c = rng.normal(size=6) + 1j * rng.normal(size=6)
    x = grid.x / width
    herm = sum(c[n] * x**n for n in range(6))
    return scale * herm * np.exp(-0.5 * x**2)


# one PASS/FAIL line per acceptance criterion, collected by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
