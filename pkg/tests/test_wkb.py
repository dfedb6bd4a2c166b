import math

import numpy as np
import pytest
import sympy as sp

from transmute_lab.geometry import Region, build_grid
from transmute_lab.presets import make_metric, make_potential
from transmute_lab.wkb import OscillatoryProbe, bump_probe, build_wkb, wkb_neumann_check, wkb_residual

PI = math.pi


@pytest.fixture(scope="module")
def grid():
    return build_grid([[0, PI]], 513)


@pytest.fixture(scope="module")
def variable():
    g = make_metric("diagonal-poly", 1)
    V = make_potential("gaussian-potential", 1, amplitude=1.0, center=1.5, width=0.5)
    return g, V


@pytest.fixture(scope="module")
def flat():
    return make_metric("identity", 1), make_potential("zero-potential", 1)


def _slope_case(g, V, grid, N_list, xi=4.0):
    sol = build_wkb(g, V, bump_probe([PI / 2], 1.3, [xi]))
    s_min = float(np.min(sol.coefficient("s", grid.points).real))
    return wkb_residual(sol, grid, 25.0 / (min(N_list) * s_min), N_list)


def test_constant_metric_degeneracies(flat, grid):
    sol = build_wkb(*flat, bump_probe([1.5], 0.8, [2.0]))
    for name in ("f2", "h2", "F4", "H4"):
        assert np.max(np.abs(sol.coefficient(name, grid.points))) == 0.0


def test_f1_vanishes_at_stationary_point(flat):
    sol = build_wkb(*flat, bump_probe([1.5], 0.8, [2.0]))
    assert abs(sol.coefficient("f1", np.array([[1.5]]))[0]) < 1e-14


def test_f2_against_derived_formula(variable):
    g, V = variable
    xi = 2.0
    sol = build_wkb(g, V, bump_probe([0.6], 0.8, [xi]))
    pt = np.array([[0.3]])
    ginv = g.inverse(pt)[0, 0, 0]
    g11 = g(pt)[0, 0, 0]
    dginv = -g.d(pt)[0, 0, 0, 0] / g11 ** 2
    s = math.sqrt(ginv) * abs(xi)
    eta_t = sol.coefficient("eta_t", pt)[0]
    expected = -1j * eta_t * ginv * dginv * xi ** 3 / s
    assert sol.coefficient("f2", pt)[0] == pytest.approx(expected, rel=1e-12)


def test_closure_and_cascade_identities(variable, grid):
    sol = build_wkb(*variable, bump_probe([PI / 2], 1.3, [4.0]))
    ids = {**sol.closure_residuals(grid.points), **sol.cascade_residuals(grid.points)}
    assert max(ids.values()) <= 1e-12


@pytest.mark.parametrize("N", [1, 64])
def test_neumann_data_reproduced(variable, grid, N):
    sol = build_wkb(*variable, bump_probe([PI / 2], 1.3, [4.0]))
    rep = wkb_neumann_check(sol, grid, N)
    assert rep["real"] <= 1e-10 and rep["imag"] <= 1e-10


def test_residual_slope_variable_metric(variable, grid):
    rep = _slope_case(*variable, grid, [8, 16, 32, 64])
    assert -1.3 <= rep.slope <= -0.7
    assert np.all(np.diff(rep.stretched) < 0)


def test_constant_metric_ratio(flat, grid):
    rep = _slope_case(*flat, grid, [64, 128])
    ratio = rep.stretched[1] / rep.stretched[0]
    assert 0.4 <= ratio <= 0.6


def test_zero_profile_gives_zero(variable, grid):
    sol = build_wkb(*variable, OscillatoryProbe(sp.Integer(0), (1.0,)))
    assert not np.any(sol.phi(grid.points, 0.1, 8))
    assert not np.any(sol.residual(grid.points, 0.1, 8))


def test_support_and_decay(variable, grid):
    center, width, xi, N = 1.5, 0.6, 2.0, 16
    sol = build_wkb(*variable, bump_probe([center], width, [xi]))
    pts = grid.points
    outside = np.abs(pts[:, 0] - center) >= width
    for y in (0.0, 0.05, 0.3):
        assert not np.any(sol.phi(pts, y, N)[outside])
    s = sol.coefficient("s", pts).real
    base = np.max(np.abs(sol.phi(pts, 0.0, N)))
    for y in (0.1, 0.2, 0.4):
        z = N * y
        # the z-polynomial prefactor has degree 4; allow (1 + z)^4 growth against e^{-s z}
        bound = 10 * base * (1 + z) ** 4 * np.exp(-s * z)
        assert np.all(np.abs(sol.phi(pts, y, N)) <= bound)


def test_probe_validation(grid):
    with pytest.raises(ValueError):
        bump_probe([1.5], 0.5, [0.0])
    with pytest.raises(ValueError):
        bump_probe([1.5], 0.5, [1.0], N=0.5)
    region = Region.box(grid, [[1.0, 2.0]])
    with pytest.raises(ValueError):
        bump_probe([1.5], 0.7, [1.0]).validate(region)
    bump_probe([1.5], 0.4, [1.0]).validate(region)


def test_residual_needs_long_cap(variable, grid):
    sol = build_wkb(*variable, bump_probe([PI / 2], 1.3, [4.0]))
    with pytest.raises(ValueError):
        wkb_residual(sol, grid, 0.01, [8, 16])


def test_residual_against_direct_operator(variable):
    # independent route: apply -Delta_g - d_y^2 + V to Phi_N by fourth-order differences
    g, V = variable
    sol = build_wkb(g, V, bump_probe([1.5], 0.9, [1.5]))
    N = 4.0
    d = 1e-3
    stencil = np.array([-2, -1, 0, 1, 2]) * d
    w1 = np.array([1, -8, 0, 8, -1]) / (12 * d)
    w2 = np.array([-1, 16, -30, 16, -1]) / (12 * d ** 2)
    xs = np.array([1.1, 1.4, 1.6, 1.9])
    y = 0.15
    pts = xs[:, None]
    Phi_x = np.stack([sol.phi((xs + e)[:, None], y, N) for e in stencil])
    Phi_y = np.stack([sol.phi(pts, y + e, N) for e in stencil])
    ux, uxx = w1 @ Phi_x, w2 @ Phi_x
    uyy = w2 @ Phi_y
    g11 = g(pts)[:, 0, 0]
    dg11 = g.d(pts)[:, 0, 0, 0]
    # Delta_g u = g^{-1/2} (g^{-1/2} u')' in one dimension
    lap = uxx / g11 - 0.5 * dg11 / g11 ** 2 * ux
    direct = -lap - uyy + V(pts) * sol.phi(pts, y, N)
    res = sol.residual(pts, y, N)
    assert np.max(np.abs(res)) > 0.1  # nontrivial comparison
    assert np.max(np.abs(direct - res)) <= 1e-7 * np.max(np.abs(res))
