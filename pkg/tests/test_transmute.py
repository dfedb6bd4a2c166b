import math

import numpy as np
import pytest

from transmute_lab.calculus import heat_apply
from transmute_lab.geometry import Region, build_grid
from transmute_lab.operators import assemble, eigendecompose
from transmute_lab.presets import make_metric, make_potential
from transmute_lab.transmute import (heat_moment_quadrature, heat_moment_vanish, kannai_heat_from_wave,
                                     restricted_dn_wave, scalar_kannai, stable_step, wave_leapfrog,
                                     wave_source_to_solution)

from conftest import interior_random

PI = math.pi


def _pulse(t, center, radius):
    r = (t - center) / radius
    return math.exp(1 - 1 / (1 - r * r)) if abs(r) < 1 else 0.0


def _dpulse(t, center, radius):
    r = (t - center) / radius
    if abs(r) >= 1:
        return 0.0
    return _pulse(t, center, radius) * (-2 * r / (1 - r * r) ** 2) / radius


def _bump(grid, a, b):
    x = grid.points[:, 0]
    u = np.zeros_like(x)
    inside = (x > a) & (x < b)
    s = (x[inside] - a) / (b - a)
    u[inside] = np.exp(-1 / (s * (1 - s)))
    return u


# --- Kannai transmutation ------------------------------------------------------


@pytest.mark.parametrize("lam", [0.3, 1.0, 4.0, 25.0])
@pytest.mark.parametrize("t", [0.01, 0.1, 1.0, 5.0])
def test_scalar_kannai(lam, t):
    r = scalar_kannai(lam, t)
    assert r.lhs == pytest.approx(math.exp(-t * lam * lam), rel=1e-15)
    assert abs(r.lhs - r.rhs) <= 1e-12
    assert r.error_estimate <= 1e-12


def test_scalar_kannai_tail():
    r = scalar_kannai(1.0, 30.0)
    assert abs(r.rhs - math.exp(-30.0)) <= 1e-14
    with pytest.raises(ValueError):
        scalar_kannai(-1.0, 1.0)


@pytest.mark.parametrize("t", [0.02, 0.5])
def test_operator_kannai(varline, t):
    f = interior_random(varline.grid, np.random.default_rng(1))
    a = kannai_heat_from_wave(varline, f, t)
    b = heat_apply(varline, t, f)
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(f))


# --- wave source-to-solution -----------------------------------------------------


def test_wave_source_zero(varline):
    region = Region.box(varline.grid, [[0.5, 2.5]])
    tr = wave_source_to_solution(varline, lambda tau: np.zeros(varline.grid.num_nodes), region, 2.0)
    assert not np.any(tr.values)


def test_wave_source_switched_off_mode(line513):
    spec = line513
    h = spec.grid.h
    whole = Region.box(spec.grid, [[h / 2, PI - h / 2]])
    phi = spec.mode(0)
    T, n = 2.0, 401
    times = np.linspace(0, T, n)
    Fs = np.outer(times < T / 2, phi).astype(float)
    Fs[n // 2] = 0.5 * phi  # the jump sits on a sample; its midpoint value keeps the rule second order
    tr = wave_source_to_solution(spec, Fs, whole, T, n)
    om = math.sqrt(spec.gap)
    exact = (math.cos(om * T / 2) - math.cos(om * T)) / om ** 2
    got = tr.values[-1] / phi[tr.nodes]
    assert np.allclose(got[np.abs(phi[tr.nodes]) > 0.1 * np.abs(phi).max()], exact, rtol=1e-5)


def test_wave_source_finite_speed(line513):
    grid = line513.grid
    region = Region.box(grid, [[0.3, 2.8]])
    f = _bump(grid, 0.4, 0.8)
    tr = wave_source_to_solution(line513, lambda tau: f * _pulse(tau, 0.3, 0.25), region, 1.0)
    x = grid.points[tr.nodes, 0]
    far = x > 0.8 + 1.0 + 0.1
    assert np.max(np.abs(tr.values[:, far])) <= 1e-6 * np.max(np.abs(tr.values))
    with pytest.raises(ValueError):
        wave_source_to_solution(line513, lambda tau: _bump(grid, 0.1, 0.5), region, 1.0)


# --- leapfrog ------------------------------------------------------------------


def test_leapfrog_single_mode(varline):
    op = varline.op
    dt = stable_step(op)
    steps = 500
    phi = varline.mode(0)
    traj = wave_leapfrog(op, None, dt, steps * dt, phi, None, record_every=50)
    om = math.sqrt(varline.gap)
    for t, w in zip(traj.times, traj.values):
        assert np.max(np.abs(w - math.cos(om * t) * phi)) <= 1e-3 * np.max(np.abs(phi))


def test_leapfrog_zero_and_energy(varline):
    op = varline.op
    dt = stable_step(op)
    z = wave_leapfrog(op, None, dt, 100 * dt)
    assert not np.any(z.values)
    rng = np.random.default_rng(2)
    traj = wave_leapfrog(op, None, dt, 2000 * dt, interior_random(varline.grid, rng),
                         interior_random(varline.grid, rng), record_every=100)
    assert traj.energy_drift <= 1e-10


def test_leapfrog_rejects_bad_steps(varline):
    op = varline.op
    dt = stable_step(op)
    with pytest.raises(ValueError):
        wave_leapfrog(op, None, 1.2 * dt / 0.9, 1.0)
    with pytest.raises(ValueError):
        wave_leapfrog(op, None, dt, 10.5 * dt)


# --- restricted wave DN map ----------------------------------------------------


def _flat(nodes, length=PI):
    grid = build_grid([[0, length]], nodes)
    return grid, make_metric("identity", 1), make_potential("zero-potential", 1)


def test_dn_zero_data():
    grid, g, V = _flat(257)
    region = Region.box(grid, [[1.0, 2.0]])
    tr = restricted_dn_wave(grid, g, V, region, lambda t: np.zeros(2), 1.0)
    assert not np.any(tr.values)


def test_dn_matches_travelling_wave():
    # exterior intervals (0, 1) and (2, pi): before any reflection returns, w = f(t - dist)
    # and the conormal derivative toward the window equals f'(t) on both edges
    grid, g, V = _flat(1025)
    region = Region.box(grid, [[1.0, 2.0]])
    c, r = 0.7, 0.6
    tr = restricted_dn_wave(grid, g, V, region, lambda t: np.full(2, _pulse(t, c, r)), 2.0)
    exact = np.array([_dpulse(t, c, r) for t in tr.times])
    scale = np.max(np.abs(exact))
    for j in range(tr.values.shape[1]):
        assert np.max(np.abs(tr.values[:, j] - exact)) <= 0.01 * scale


def test_dn_converges_under_refinement():
    c, r, T = 1.0, 0.9, 3.0
    finals = []
    for n in (513, 1025, 2049):
        grid, g, V = _flat(n, 4.0)  # window edges at 1 and 2 are nodes on every level
        region = Region.box(grid, [[1.0, 2.0]])
        tr = restricted_dn_wave(grid, g, V, region, lambda t: np.full(2, _pulse(t, c, r)), T, dt=1.0 / 1024)
        finals.append(tr.values)
    # the reflected wave from x = 0 returns to the left edge after t = 2 and is included
    e1 = np.max(np.abs(finals[0] - finals[2]))
    e2 = np.max(np.abs(finals[1] - finals[2]))
    assert e2 <= 0.02 * np.max(np.abs(finals[2]))
    assert e1 / e2 > 3


def test_dn_rejects_nonzero_initial_data():
    grid, g, V = _flat(129)
    region = Region.box(grid, [[1.0, 2.0]])
    with pytest.raises(ValueError):
        restricted_dn_wave(grid, g, V, region, lambda t: np.full(2, 1.0 + t), 1.0)


# --- heat moments --------------------------------------------------------------


@pytest.fixture(scope="module")
def moment_pair():
    grid = build_grid([[0, PI]], 129)
    g = make_metric("diagonal-poly", 1)
    a = eigendecompose(assemble(grid, g, make_potential("gaussian-potential", 1, center=1.5)))
    b = eigendecompose(assemble(grid, g, make_potential("gaussian-potential", 1, center=1.9, amplitude=0.5)))
    return a, b, Region.box(grid, [[0.5, 1.0]]), Region.box(grid, [[1.6, 2.2]])


def test_heat_moments_match_quadrature(moment_pair):
    a, b, source, window = moment_pair
    f = _bump(a.grid, 0.5, 1.0)
    mom = heat_moment_vanish(a, b, f, source, window, k_max=2)
    for k in (0, 1):
        quad = heat_moment_quadrature(a, b, f, window, k)
        assert np.max(np.abs(mom.values[k] - quad)) <= 1e-9 * np.max(np.abs(mom.values[k]))


def test_heat_moments_vanish_for_identical_operators(moment_pair):
    a, _, source, window = moment_pair
    mom = heat_moment_vanish(a, a, _bump(a.grid, 0.5, 1.0), source, window, k_max=4)
    assert mom.max_abs.shape == (5,) and not np.any(mom.max_abs)


def test_heat_moments_reject_bad_input(moment_pair):
    a, b, source, window = moment_pair
    f = _bump(a.grid, 0.5, 1.0)
    with pytest.raises(ValueError):
        heat_moment_vanish(a, b, f, source, window, k_max=5)
    with pytest.raises(ValueError):
        heat_moment_vanish(a, b, f, source, Region.box(a.grid, [[0.9, 1.4]]), k_max=2)
    with pytest.raises(ValueError):
        heat_moment_vanish(a, b, _bump(a.grid, 0.4, 1.2), source, window, k_max=2)
