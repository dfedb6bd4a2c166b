import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from transmute_lab import calculus as C

from conftest import interior_random

PI = math.pi


def _sin(spec, k):
    x = spec.grid.points[:, 0]
    u = np.sin(k * x)
    u[spec.grid.boundary_mask] = 0
    return u


def _symbol(spec, k):
    # sampled sin(kx) is an exact eigenvector of the 3-point stencil
    h = spec.grid.h
    return (2 / h * math.sin(k * h / 2)) ** 2


# --- fractional powers ------------------------------------------------------


def test_frac_power_single_mode(varline):
    phi = varline.mode(0)
    assert np.allclose(C.frac_power_apply(varline, 0.5, phi), math.sqrt(varline.gap) * phi, atol=1e-12)


def test_frac_power_zero_is_identity(varline):
    u = interior_random(varline.grid, np.random.default_rng(0))
    assert np.allclose(C.frac_power_apply(varline, 0.0, u), u, atol=1e-12)


def test_frac_power_sin2x(line513):
    u = _sin(line513, 2)
    out = C.frac_power_apply(line513, -0.5, u)
    assert np.max(np.abs(out - u / math.sqrt(_symbol(line513, 2)))) < 1e-10
    assert np.max(np.abs(out - u / 2)) < 1e-5


def test_frac_power_rejects_bad_input(varline):
    u = np.ones(varline.grid.num_nodes)
    with pytest.raises(ValueError):
        C.frac_power_apply(varline, 0.5, u)
    with pytest.raises(ValueError):
        C.frac_power_apply(varline, 2.5, np.zeros(varline.grid.num_nodes))


@given(s=st.floats(-1.5, 1.5), seed=st.integers(0, 1000))
def test_self_adjoint_and_inverse_pairs(varline, s, seed):
    rng = np.random.default_rng(seed)
    u, v = interior_random(varline.grid, rng), interior_random(varline.grid, rng)
    Psu, Psv = C.frac_power_apply(varline, s, u), C.frac_power_apply(varline, s, v)
    half_u, half_v = C.frac_power_apply(varline, s / 2, u), C.frac_power_apply(varline, s / 2, v)
    a, b, c = varline.inner(Psu, v), varline.inner(u, Psv), varline.inner(half_u, half_v)
    scale = max(abs(a), 1e-300) + varline.norm(Psu) * varline.norm(v)
    assert abs(a - b) <= 1e-10 * scale and abs(a - c) <= 1e-10 * scale
    back = C.frac_power_apply(varline, -s, Psu)
    assert np.max(np.abs(back - u)) <= 1e-9 * np.max(np.abs(u))


# --- heat ---------------------------------------------------------------------


def test_heat_identities(varline):
    u = interior_random(varline.grid, np.random.default_rng(3))
    assert np.array_equal(C.heat_apply(varline, 0.0, u), C.frac_power_apply(varline, 0.0, u))
    phi = varline.mode(0)
    assert np.allclose(C.heat_apply(varline, 1.0, phi), math.exp(-varline.gap) * phi, atol=1e-13)
    with pytest.raises(ValueError):
        C.heat_apply(varline, -1.0, u)


def test_heat_sin3x(line513):
    u = _sin(line513, 3)
    out = C.heat_apply(line513, 0.1, u)
    assert np.max(np.abs(out - math.exp(-0.1 * _symbol(line513, 3)) * u)) < 1e-10
    # against the continuum value the O(h^2) symbol error (~1e-5 here) dominates
    assert np.max(np.abs(out - math.exp(-0.9) * u)) < 2e-5


@given(t1=st.floats(0.0, 2.0), t2=st.floats(0.0, 2.0), seed=st.integers(0, 1000))
def test_semigroup_law_and_contraction(varline, t1, t2, seed):
    u = interior_random(varline.grid, np.random.default_rng(seed))
    a = C.heat_apply(varline, t1, C.heat_apply(varline, t2, u))
    b = C.heat_apply(varline, t1 + t2, u)
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(u))
    assert varline.norm(b) <= math.exp(-varline.gap * (t1 + t2)) * varline.norm(u) * (1 + 1e-10)


def test_heat_positivity(varline):
    x = varline.grid.points[:, 0]
    u = np.exp(-20 * (x - 1.2) ** 2)
    u[varline.grid.boundary_mask] = 0
    out = C.heat_apply(varline, 0.05, u)
    assert out.min() >= -1e-8 * out.max()


def test_heat_kernel_properties(varline):
    K = C.heat_kernel(varline, 0.3)
    assert np.max(np.abs(K - K.T)) <= 1e-10 * np.max(np.abs(K))
    op = varline.op
    u = varline.mode(1)
    applied = op.to_grid(K @ (op.mass * op.to_active(u)))
    assert np.allclose(applied, C.heat_apply(varline, 0.3, u), atol=1e-10)
    with pytest.raises(ValueError):
        C.heat_kernel(varline, 0.0)


def test_heat_kernel_against_series(line513):
    K = C.heat_kernel(line513, 0.5)
    op = line513.op
    x = line513.grid.points[op.active, 0]
    idx = np.array([40, 128, 255, 300, 470])
    X, Z = np.meshgrid(x[idx], x[idx], indexing="ij")
    k = np.arange(1, 41)
    series = (2 / PI) * np.einsum("k,ijk,ijk->ij", np.exp(-0.5 * k ** 2),
                                   np.sin(k * X[..., None]), np.sin(k * Z[..., None]))
    rel = np.max(np.abs(K[np.ix_(idx, idx)] - series)) / np.max(np.abs(series))
    # discrete eigenvalues (2/h sin(kh/2))^2 differ from k^2 at O(h^2): 7.4e-6 here, 1.8e-6 at 1025 nodes
    assert rel < 2e-5


# --- semigroup integral representations ----------------------------------------


def test_neg_power_single_and_two_modes(varline):
    phi1, phi3 = varline.mode(0), varline.mode(2)
    lam = varline.eigenvalues
    out = C.neg_power_via_semigroup(varline, 0.5, phi1)
    assert np.max(np.abs(out - phi1 / math.sqrt(lam[0]))) <= 1e-8 * np.max(np.abs(phi1))
    out = C.neg_power_via_semigroup(varline, 0.5, phi1 + phi3)
    ref = phi1 / math.sqrt(lam[0]) + phi3 / math.sqrt(lam[2])
    assert np.max(np.abs(out - ref)) <= 1e-8 * np.max(np.abs(ref))
    assert not np.any(C.neg_power_via_semigroup(varline, 0.5, np.zeros_like(phi1)))


def test_frac_power_semigroup_and_composition(varline):
    phi2 = varline.mode(1)
    out = C.frac_power_via_semigroup(varline, 0.5, phi2)
    assert np.max(np.abs(out - math.sqrt(varline.eigenvalues[1]) * phi2)) <= 1e-6 * np.max(np.abs(out))
    u = interior_random(varline.grid, np.random.default_rng(5))
    back = C.frac_power_via_semigroup(varline, 0.5, C.neg_power_via_semigroup(varline, 0.5, u))
    assert np.max(np.abs(back - u)) <= 1e-6 * np.max(np.abs(u))


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_semigroup_formulas_match_spectral(varline, s):
    u = interior_random(varline.grid, np.random.default_rng(7))
    for fn, power in ((C.neg_power_via_semigroup, -s), (C.frac_power_via_semigroup, s)):
        got, err = fn(varline, s, u, full_output=True)
        ref = C.frac_power_apply(varline, power, u)
        assert np.linalg.norm(got - ref) <= 1e-8 * np.linalg.norm(ref)
        assert err <= 1e-10


def test_scalar_gamma_identity_oracle():
    # int_0^inf e^{-t lam} t^{-1/2} dt = Gamma(1/2) lam^{-1/2}, checked with an independent rule
    from scipy.integrate import quad
    for lam in (0.7, 3.0, 40.0):
        val, _ = quad(lambda t: math.exp(-t * lam) / math.sqrt(t), 0, np.inf)
        assert val == pytest.approx(math.sqrt(PI / lam), rel=1e-10)


def test_semigroup_rejects_s_outside(varline):
    with pytest.raises(ValueError):
        C.neg_power_via_semigroup(varline, 1.0, varline.mode(0))


def test_quadrature_rule_invariants():
    q = C.log_panel_rule(1e-3, 10.0)
    assert np.all(q.weights > 0) and np.all(np.diff(q.nodes) > 0)
    with pytest.raises(ValueError):
        C.QuadratureRule("bad", np.array([1.0, 0.5]), np.array([1.0, 1.0]), 0.1, 1.0)


# --- waves -------------------------------------------------------------------


def test_wave_single_modes(varline):
    phi1, phi2 = varline.mode(0), varline.mode(1)
    w1, w2 = math.sqrt(varline.eigenvalues[0]), math.sqrt(varline.eigenvalues[1])
    for t in (0.3, 2.0, 7.5):
        assert np.allclose(C.wave_propagate(varline, phi1, None, None, t), math.cos(t * w1) * phi1, atol=1e-12)
        assert np.allclose(C.wave_propagate(varline, None, phi2, None, t), math.sin(t * w2) / w2 * phi2, atol=1e-12)


def test_wave_duhamel_closed_form(line513):
    spec = line513
    u = _sin(spec, 1)

    def F(tau):
        return u * (1.0 if tau < 1 else 0.0)

    # sample so that tau = 1 falls between grid samples only at the jump; use a mesh with a node at 1
    n = 2001
    times = np.linspace(0, 2, n)
    Fs = np.stack([F(t) for t in times])
    Fs[times == 1.0] = 0.5 * u  # midpoint value at the jump keeps Simpson second order
    out = C.wave_propagate(spec, None, None, Fs, 2.0)
    coef = spec.coefficients(out)[0] / spec.coefficients(u)[0]
    omega = math.sqrt(spec.eigenvalues[0])
    exact = (math.cos(omega * 1.0) - math.cos(omega * 2.0)) / omega ** 2
    assert coef == pytest.approx(exact, rel=1e-5)
    assert exact == pytest.approx(math.cos(1) - math.cos(2), rel=1e-4)


def test_wave_cosine_even(varline):
    u = interior_random(varline.grid, np.random.default_rng(2))
    a = C.cosine_propagator(varline, u, 1.7)
    b = C.cosine_propagator(varline, u, -1.7)
    assert np.array_equal(a, b)


def test_wave_energy_conserved(varline):
    rng = np.random.default_rng(4)
    w0 = sum(rng.standard_normal() * varline.mode(k) / (k + 1) ** 2 for k in range(8))
    w1 = sum(rng.standard_normal() * varline.mode(k) / (k + 1) ** 2 for k in range(8))
    times = np.linspace(0, 5, 51)
    traj = C.wave_trajectory(varline, w0, w1, None, times)
    E = [C.wave_energy(varline, varline.synthesize(c), varline.synthesize(v))
         for c, v in zip(traj.coefficients, traj.velocities)]
    assert np.max(np.abs(np.array(E) - E[0])) / E[0] <= 1e-8
    with pytest.raises(ValueError):
        C.wave_propagate(varline, w0, None, None, -1.0)
