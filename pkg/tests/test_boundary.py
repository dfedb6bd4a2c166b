import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy.integrate import quad

from transmute_lab.boundary import (check_aliasing, default_covectors, default_frequencies, extrapolate_limit,
                                    max_frequency, pairing_limit_target, pairing_sequence, polarize,
                                    potential_difference_target, potential_pairings, recover_metric_on_gamma,
                                    recover_potential_difference, symbol_ratio)
from transmute_lab.extension import NDMap
from transmute_lab.geometry import MetricField, PotentialField, Region, build_grid, smooth_bump, _lambdify
from transmute_lab.operators import assemble, eigendecompose
from transmute_lab.presets import make_metric, make_potential
from transmute_lab.wkb import OscillatoryProbe, bump_probe

PI = math.pi


def _nd(grid, g, V, bounds):
    return NDMap(eigendecompose(assemble(grid, g, V)), Region.box(grid, bounds))


@pytest.fixture(scope="module")
def grid513():
    return build_grid([[0, PI]], 513)


@pytest.fixture(scope="module")
def flat_nd(grid513):
    return _nd(grid513, make_metric("identity", 1), make_potential("zero-potential", 1), [[0.3, PI - 0.3]])


def _bump_sq_integral(center, width):
    bump = _lambdify(smooth_bump([center], width), 1)
    val, _ = quad(lambda t: float(bump(np.array([[t]]))[0]) ** 2, center - width, center + width,
                  epsabs=1e-14, epsrel=1e-12)
    return val


def _potential_freqs(grid, probe):
    # the symbol-corrected potential pairings use the upper window of the aliasing cap
    return default_frequencies(grid, probe.xi, 4, 0.3, 1.0)


def _limit(nd, probe):
    Ns = default_frequencies(nd.grid, probe.xi)
    return extrapolate_limit(Ns, pairing_sequence(nd, probe, Ns).real)


# --- pairing limits -----------------------------------------------------------


def test_pairing_limit_identity(flat_nd):
    probe = bump_probe([1.5], 0.8, [1.0])
    est = _limit(flat_nd, probe)
    exact = _bump_sq_integral(1.5, 0.8)
    assert pairing_limit_target(flat_nd, probe) == pytest.approx(exact, rel=1e-6)
    assert est.limit == pytest.approx(exact, rel=0.03)


def test_pairing_limit_scales_inversely_with_covector(flat_nd):
    a = _limit(flat_nd, bump_probe([1.5], 0.8, [1.0])).limit
    b = _limit(flat_nd, bump_probe([1.5], 0.8, [2.0])).limit
    assert b / a == pytest.approx(0.5, rel=0.03)


def test_zero_profile_pairings_vanish(flat_nd):
    seq = pairing_sequence(flat_nd, OscillatoryProbe(sp.Integer(0), (1.0,)), [10, 20, 30])
    assert not np.any(seq)


def test_pairing_sequence_rejects_bad_frequencies(flat_nd):
    probe = bump_probe([1.5], 0.8, [1.0])
    cap = max_frequency(flat_nd.grid, probe.xi)
    with pytest.raises(ValueError):
        pairing_sequence(flat_nd, probe, [10, 1.5 * cap])
    with pytest.raises(ValueError):
        pairing_sequence(flat_nd, probe, [20, 10])


def test_aliasing_guard():
    grid = build_grid([[0, PI]], 129)
    cap = PI / 4 / grid.h
    assert max_frequency(grid, [1.0]) == pytest.approx(cap, rel=1e-14)
    check_aliasing(grid, [1.0], [cap / 2, cap])
    with pytest.raises(ValueError):
        check_aliasing(grid, [2.0], [cap])


# --- extrapolation --------------------------------------------------------------


def test_extrapolate_exact_models():
    N = [8, 16, 32, 64]
    rep = extrapolate_limit(N, [2.0 + 3.0 / n for n in N])
    assert rep.limit == pytest.approx(2.0, abs=1e-12)
    rep = extrapolate_limit(N, [0.7] * 4)
    assert rep.limit == pytest.approx(0.7, abs=1e-14) and rep.error <= 1e-12
    rep = extrapolate_limit(N[:3], [1 + 1 / n - 2 / n ** 2 for n in N[:3]])
    assert rep.limit == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        extrapolate_limit([8, 16], [1.0, 1.0])


# --- metric recovery ------------------------------------------------------------


@given(a=st.floats(0.3, 3.0), c=st.floats(0.3, 3.0), t=st.floats(-0.9, 0.9))
def test_polarize_recovers_quadratic_form(a, c, t):
    b = t * math.sqrt(a * c)
    G = np.array([[a, b], [b, c]])
    xis = default_covectors(2)
    q = [np.asarray(x) @ G @ np.asarray(x) for x in xis]
    assert np.allclose(polarize(xis, q), G, atol=1e-12)


def test_polarize_rejects_degenerate_family():
    with pytest.raises(ValueError):
        polarize([(1.0, 0.0), (2.0, 0.0), (0.0, 1.0)], [1.0, 4.0, 1.0])


def test_symbol_ratio_limits():
    grid = build_grid([[0, PI]], 513)
    G = np.array([[1.0]])
    assert symbol_ratio(grid, G, [1.0], 1e-3) == pytest.approx(1.0, abs=1e-10)
    N = 100.0
    h = grid.h
    assert symbol_ratio(grid, G, [1.0], N) == pytest.approx(2 / h * math.sin(N * h / 2) / N, rel=1e-14)


def test_recover_constant_scaled_metric(grid513):
    g = MetricField(sp.ImmutableMatrix([[4]]), 0.25)
    nd = _nd(grid513, g, make_potential("zero-potential", 1), [[0.3, PI - 0.3]])
    est = recover_metric_on_gamma(nd, [[1.5]], 0.5)[0]
    assert est.ginv[0, 0] == pytest.approx(0.25, rel=0.02)


def test_recover_identity_2d():
    grid = build_grid([[0, PI], [0, PI]], 65)
    nd = _nd(grid, make_metric("identity", 2), make_potential("zero-potential", 2), [[0.5, 2.6], [0.5, 2.6]])
    est = recover_metric_on_gamma(nd, [[1.55, 1.55]], 0.8)[0]
    assert np.allclose(est.ginv, np.eye(2), atol=0.05)
    assert np.all(np.linalg.eigvalsh(est.ginv) > 0)


# --- potential recovery ---------------------------------------------------------


@pytest.fixture(scope="module")
def potential_pair(grid513):
    g = make_metric("identity", 1)
    bounds = [[0.3, PI - 0.3]]
    return (_nd(grid513, g, PotentialField(sp.Integer(1), 1), bounds),
            _nd(grid513, g, make_potential("zero-potential", 1), bounds))


def test_potential_unit_difference(potential_pair):
    nd1, nd0 = potential_pair
    probe = bump_probe([1.5], 0.8, [1.0])
    Ns = _potential_freqs(nd1.grid, probe)
    est = recover_potential_difference(nd1, nd0, probe, Ns)
    exact = _bump_sq_integral(1.5, 0.8) / 2
    assert potential_difference_target(nd1, nd0, probe) == pytest.approx(exact, rel=1e-6)
    assert est.estimate == pytest.approx(exact, rel=0.02)


def test_potential_equal_maps_give_zero(potential_pair):
    nd1, _ = potential_pair
    probe = bump_probe([1.5], 0.8, [1.0])
    seq = potential_pairings(nd1, nd1, probe, default_frequencies(nd1.grid, probe.xi))
    assert not np.any(seq)


def test_potential_disjoint_difference_is_invisible(grid513, potential_pair):
    _, nd0 = potential_pair
    g = nd0.metric
    far = _nd(grid513, g, PotentialField(smooth_bump([2.5], 0.3), 1), [[0.3, PI - 0.3]])
    probe = bump_probe([1.0], 0.5, [1.0])
    Ns = _potential_freqs(grid513, probe)
    est = recover_potential_difference(far, nd0, probe, Ns)
    reference = _bump_sq_integral(1.0, 0.5) / 2  # size of a unit potential under the same probe
    assert abs(est.estimate) < 0.01 * reference


def test_potential_requires_shared_metric(grid513, potential_pair):
    nd1, _ = potential_pair
    other = _nd(grid513, make_metric("diagonal-poly", 1), make_potential("zero-potential", 1), [[0.3, PI - 0.3]])
    probe = bump_probe([1.5], 0.8, [1.0])
    with pytest.raises(ValueError):
        potential_pairings(nd1, other, probe, [10, 20, 30])
