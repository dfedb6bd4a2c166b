import math

import pytest
from hypothesis import HealthCheck, settings

from transmute_lab.geometry import build_grid
from transmute_lab.operators import assemble, eigendecompose
from transmute_lab.presets import make_metric, make_potential

settings.register_profile("lab", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("lab")

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

PI = math.pi


@pytest.fixture(scope="session")
def line513():
    grid = build_grid([[0, PI]], 513)
    return eigendecompose(assemble(grid, make_metric("identity", 1), make_potential("zero-potential", 1)))


@pytest.fixture(scope="session")
def line129():
    grid = build_grid([[0, PI]], 129)
    return eigendecompose(assemble(grid, make_metric("identity", 1), make_potential("zero-potential", 1)))


@pytest.fixture(scope="session")
def varline():
    """1D variable metric and Gaussian potential on 129 nodes."""
    grid = build_grid([[0, PI]], 129)
    g = make_metric("diagonal-poly", 1)
    V = make_potential("gaussian-potential", 1, amplitude=1.0, center=1.5, width=0.5)
    return eigendecompose(assemble(grid, g, V))


@pytest.fixture(scope="session")
def offdiag2d():
    grid = build_grid([[0, 1], [0, 1]], 21)
    return eigendecompose(assemble(grid, make_metric("offdiag-bump", 2), make_potential("zero-potential", 2)))


def interior_random(grid, rng, complex_=False):
    u = rng.standard_normal(grid.num_nodes)
    if complex_:
        u = u + 1j * rng.standard_normal(grid.num_nodes)
    u[grid.boundary_mask] = 0
    return u
