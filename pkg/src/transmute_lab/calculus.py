"""Spectral functional calculus and semigroup-integral cross checks.

Every function takes a SpectralDecomposition and full-grid arrays.  The
semigroup formulas for P^{-s} and P^{s} are evaluated as quadratures in t of
the heat semigroup applied to the data; since e^{-tP} acts diagonally on the
eigenbasis, the quadrature is accumulated per mode.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .operators import SpectralDecomposition


class QuadratureWarning(UserWarning):
    pass


def _check_vanishing(spec: SpectralDecomposition, u: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    u = np.asarray(u)
    if u.shape[-1] != spec.grid.num_nodes:
        raise ValueError("grid function has the wrong number of nodes")
    off = u[..., spec.op.inactive]
    scale = float(np.max(np.abs(u))) if u.size else 0.0
    if off.size and np.max(np.abs(off)) > tol * max(scale, 1e-300):
        raise ValueError("grid function must vanish on the Dirichlet nodes")
    return u


def frac_power_apply(spec: SpectralDecomposition, s: float, u: np.ndarray) -> np.ndarray:
    """P^s u = sum_k lambda_k^s u_k phi_k for s in [-2, 2]."""
    if not -2 <= s <= 2:
        raise ValueError("s must lie in [-2, 2]")
    u = _check_vanishing(spec, u)
    return spec.apply_function(lambda lam: lam ** s, u)


def heat_apply(spec: SpectralDecomposition, t: float, u: np.ndarray) -> np.ndarray:
    """e^{-tP} u."""
    if t < 0:
        raise ValueError("heat time must be nonnegative")
    u = _check_vanishing(spec, u)
    return spec.apply_function(lambda lam: np.exp(-t * lam), u)


def heat_kernel(spec: SpectralDecomposition, t: float) -> np.ndarray:
    """K_t = Phi diag(e^{-t lambda}) Phi^T on the active nodes.

    The kernel is taken against dV_g, so K_t @ (M u) reproduces e^{-tP} u.
    """
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    Phi = spec.modes
    return (Phi * np.exp(-t * spec.eigenvalues)) @ Phi.T


# --------------------------------------------------------------------------
# quadrature in t for the semigroup formulas


@dataclass(frozen=True)
class QuadratureRule:
    """Composite Gauss-Legendre rule in u = log t on [t_min, t_max].

    ``weights`` already include the Jacobian dt = t du.  The pieces (0, t_min)
    and (t_max, inf) are handled analytically by the callers.
    """

    scheme: str
    nodes: np.ndarray
    weights: np.ndarray
    t_min: float
    t_max: float
    abs_tol: float = 1e-13
    rel_tol: float = 1e-10

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("quadrature nodes must be strictly increasing")


def log_panel_rule(t_min: float, t_max: float, panel_width: float = 0.5, order: int = 16,
                   rel_tol: float = 1e-10) -> QuadratureRule:
    if not 0 < t_min < t_max:
        raise ValueError("need 0 < t_min < t_max")
    a, b = math.log(t_min), math.log(t_max)
    panels = max(1, int(math.ceil((b - a) / panel_width)))
    edges = np.linspace(a, b, panels + 1)
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wu = (half[:, None] * w[None, :]).ravel()
    t = np.exp(u)
    return QuadratureRule("log-gauss-panels", t, wu * t, t_min, t_max, rel_tol=rel_tol)


def _rule_for(lam: np.ndarray, panel_width: float, rel_tol: float) -> QuadratureRule:
    lam_min, lam_max = float(lam.min()), float(lam.max())
    if lam_min <= 0:
        raise ValueError("semigroup formulas need a positive spectrum")
    # below t_min the exponential is summed as a power series (lambda t <= 1/2)
    t_min = 0.5 / lam_max
    t_max = max(40.0 / lam_min, 2 * t_min)
    return log_panel_rule(t_min, t_max, panel_width, rel_tol=rel_tol)


def _neg_weights(lam: np.ndarray, s: float, q: QuadratureRule) -> np.ndarray:
    """(1/Gamma(s)) int_0^inf e^{-t lam} t^{s-1} dt per eigenvalue."""
    t, w = q.nodes, q.weights
    body = (w * t ** (s - 1)) @ np.exp(-np.outer(t, lam))
    a = q.t_min
    head = np.zeros_like(lam)
    term = np.ones_like(lam)
    for m in range(60):
        if m:
            term = term * (-lam * a) / m
        head += term * a ** s / (m + s)
    return (head + body) / math.gamma(s)


def _pos_weights(lam: np.ndarray, s: float, q: QuadratureRule) -> np.ndarray:
    """(1/Gamma(-s)) int_0^inf (e^{-t lam} - 1) t^{-1-s} dt per eigenvalue."""
    t, w = q.nodes, q.weights
    body = (w * t ** (-1 - s)) @ np.expm1(-np.outer(t, lam))
    a = q.t_min
    head = np.zeros_like(lam)
    term = np.ones_like(lam)
    for m in range(1, 61):
        term = term * (-lam * a) / m
        head += term * a ** (-s) / (m - s)
    tail = -q.t_max ** (-s) / s
    return (head + body + tail) / math.gamma(-s)


def _adaptive(weight_fn, lam: np.ndarray, s: float, tol: float, q: QuadratureRule | None):
    if q is not None:
        return weight_fn(lam, s, q), float("nan")
    width = 1.0
    prev = weight_fn(lam, s, _rule_for(lam, width, tol))
    err = float("inf")
    for _ in range(6):
        width /= 2
        cur = weight_fn(lam, s, _rule_for(lam, width, tol))
        err = float(np.max(np.abs(cur - prev) / np.abs(cur)))
        prev = cur
        if err <= tol:
            break
    if err > tol:
        warnings.warn(f"semigroup quadrature error estimate {err:.2e} above tolerance {tol:.1e}", QuadratureWarning)
    return prev, err


def neg_power_via_semigroup(spec: SpectralDecomposition, s: float, u: np.ndarray,
                            q: QuadratureRule | None = None, tol: float = 1e-10, full_output: bool = False):
    """P^{-s} u = (1/Gamma(s)) int_0^inf e^{-tP} u t^{s-1} dt for s in (0, 1)."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    u = _check_vanishing(spec, u)
    weights, err = _adaptive(_neg_weights, spec.eigenvalues, s, tol, q)
    out = spec.apply_function(lambda lam: weights, u)
    return (out, err) if full_output else out


def frac_power_via_semigroup(spec: SpectralDecomposition, s: float, u: np.ndarray,
                             q: QuadratureRule | None = None, tol: float = 1e-10, full_output: bool = False):
    """P^{s} u = (1/Gamma(-s)) int_0^inf (e^{-tP} u - u) t^{-1-s} dt for s in (0, 1)."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    u = _check_vanishing(spec, u)
    weights, err = _adaptive(_pos_weights, spec.eigenvalues, s, tol, q)
    out = spec.apply_function(lambda lam: weights, u)
    return (out, err) if full_output else out


# --------------------------------------------------------------------------
# wave propagators


def cosine_propagator(spec: SpectralDecomposition, w0: np.ndarray, t: float) -> np.ndarray:
    """cos(t P^{1/2}) w0 for any real t."""
    w0 = _check_vanishing(spec, w0)
    return spec.apply_function(lambda lam: np.cos(t * np.sqrt(lam)), w0)


def sine_propagator(spec: SpectralDecomposition, w1: np.ndarray, t: float) -> np.ndarray:
    """P^{-1/2} sin(t P^{1/2}) w1."""
    w1 = _check_vanishing(spec, w1)
    return spec.apply_function(lambda lam: np.sin(t * np.sqrt(lam)) / np.sqrt(lam), w1)


@dataclass(frozen=True)
class WaveTrajectory:
    times: np.ndarray
    coefficients: np.ndarray
    velocities: np.ndarray
    duhamel_error: float

    def state(self, spec: SpectralDecomposition, j: int = -1) -> np.ndarray:
        return spec.synthesize(self.coefficients[j])


def wave_trajectory(spec: SpectralDecomposition, w0, w1, F, times: np.ndarray) -> WaveTrajectory:
    """Modal coefficients of the wave solution at every time of a uniform mesh.

    ``F`` is None or an array of shape (len(times), nodes) sampling the
    source on ``times``; the Duhamel integrals use cumulative Simpson.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or times[0] != 0:
        raise ValueError("times must be a mesh starting at 0")
    steps = np.diff(times)
    if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > 1e-9 * steps[0]:
        raise ValueError("time mesh must be uniform and increasing")
    lam = spec.eigenvalues
    om = np.sqrt(lam)
    n = spec.grid.num_nodes
    w0 = np.zeros(n) if w0 is None else _check_vanishing(spec, w0)
    w1 = np.zeros(n) if w1 is None else _check_vanishing(spec, w1)
    c0 = spec.coefficients(w0)
    c1 = spec.coefficients(w1)
    wt = np.outer(times, om)
    cos, sin = np.cos(wt), np.sin(wt)
    coef = cos * c0 + sin * (c1 / om)
    vel = -sin * (c0 * om) + cos * c1
    err = 0.0
    if F is not None:
        F = np.asarray(F, dtype=float)
        if F.shape != (times.size, n):
            raise ValueError("source must have shape (len(times), nodes)")
        _check_vanishing(spec, F)
        Fk = spec.coefficients(F)
        Ic = cumulative_simpson(cos * Fk, x=times, axis=0, initial=0.0)
        Is = cumulative_simpson(sin * Fk, x=times, axis=0, initial=0.0)
        coef = coef + (sin * Ic - cos * Is) / om
        vel = vel + cos * Ic + sin * Is
        if times.size >= 5 and (times.size - 1) % 2 == 0:
            # Richardson-style estimate: Simpson on the full mesh vs every other sample
            full = (sin[-1] * Ic[-1] - cos[-1] * Is[-1]) / om
            Ic2 = simpson((cos * Fk)[::2], x=times[::2], axis=0)
            Is2 = simpson((sin * Fk)[::2], x=times[::2], axis=0)
            coarse = (sin[-1] * Ic2 - cos[-1] * Is2) / om
            err = float(np.max(np.abs(full - coarse))) / 15.0
    return WaveTrajectory(times, coef, vel, err)


def wave_propagate(spec: SpectralDecomposition, w0, w1, F, t: float, n_time: int | None = None,
                   full_output: bool = False):
    """w(t) = cos(t P^{1/2}) w0 + P^{-1/2} sin(t P^{1/2}) w1 + Duhamel term.

    ``F`` is None, an array sampled on linspace(0, t, n_time), or a callable
    tau -> grid function (then ``n_time`` samples are taken, default 401).
    """
    if t < 0:
        raise ValueError("wave time must be nonnegative")
    if F is None:
        times = np.array([0.0, t]) if t > 0 else np.array([0.0, 1.0])
        traj = wave_trajectory(spec, w0, w1, None, times)
        out = spec.synthesize(traj.coefficients[-1] if t > 0 else traj.coefficients[0])
        return (out, 0.0) if full_output else out
    if callable(F):
        n_time = n_time or 401
        times = np.linspace(0.0, t, n_time)
        F = np.stack([np.asarray(F(tau), dtype=float) for tau in times])
    else:
        F = np.asarray(F, dtype=float)
        times = np.linspace(0.0, t, F.shape[0])
    traj = wave_trajectory(spec, w0, w1, F, times)
    out = spec.synthesize(traj.coefficients[-1])
    return (out, traj.duhamel_error) if full_output else out


def wave_energy(spec: SpectralDecomposition, w: np.ndarray, wt: np.ndarray) -> float:
    """||w_t||_M^2 + w^T A w."""
    op = spec.op
    wa, va = op.to_active(w), op.to_active(wt)
    return float(np.sum(op.mass * va * va) + wa @ (op.A @ wa))
