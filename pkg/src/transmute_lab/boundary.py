"""Boundary determination from oscillatory Neumann data.

For phi_N = N e^{iN x.xi} eta the normalized pairings

    N^{-1} int phi_N conj(Lambda phi_N) dx   ->   int |xi|_g^{-1} eta^2 dx

determine |xi|_g on the window, hence g^{ij} by polarization over a family of
covectors.  For two maps sharing the metric,

    N <conj(phi_N), |g|^{1/2} (Lambda_1 - Lambda_2) phi_N>  ->  -int |g|^{1/2} (V_1 - V_2) eta^2 / (2 |xi|_g^3) dx,

which recovers potential differences.  The sign follows from expanding the
symbol (N^2 |xi|_g^2 + V)^{-1/2}; estimates below are reported with the sign
flipped so that they approximate the positive-weight integral of V_1 - V_2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .extension import NDMap
from .geometry import metric_norm_field
from .wkb import OscillatoryProbe, bump_probe

ALIAS_LIMIT = math.pi / 4


def max_frequency(grid, xi) -> float:
    """Largest N passing the aliasing guard N |xi| h <= pi/4."""
    return ALIAS_LIMIT / (float(np.linalg.norm(xi)) * grid.h)


def default_frequencies(grid, xi, count: int = 4, lo: float = 0.15, hi: float = 0.5) -> list[float]:
    """Evenly spaced N between lo and hi times the aliasing cap.

    The upper part of the admissible range is avoided because there the
    discrete symbol (2/h) sin(N h / 2) falls visibly below N and biases the
    pairings upward.
    """
    return list(np.linspace(lo, hi, count) * max_frequency(grid, xi))


def check_aliasing(grid, xi, N_list) -> None:
    cap = max_frequency(grid, xi)
    bad = [N for N in N_list if N > cap * (1 + 1e-12)]
    if bad:
        raise ValueError(f"frequencies {bad} violate the aliasing guard N|xi|h <= pi/4 (max {cap:.4g})")


def _probe_data(nd: NDMap, probe: OscillatoryProbe, N_list: Sequence[float]) -> np.ndarray:
    N_list = list(N_list)
    if len(N_list) == 0 or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be nonempty and increasing")
    check_aliasing(nd.grid, probe.xi, N_list)
    probe.validate(nd.region)
    return np.stack([probe.neumann_data(nd.grid, N) for N in N_list])


def _pairings(nd: NDMap, data: np.ndarray, N: np.ndarray) -> np.ndarray:
    lam = nd(data)
    return np.sum(nd.grid.weights * data * np.conj(lam), axis=-1) / N


def pairing_sequence(nd: NDMap, probe: OscillatoryProbe, N_list: Sequence[float]) -> np.ndarray:
    """N^{-1} int_Gamma phi_N conj(Lambda phi_N) dx for each N (complex)."""
    data = _probe_data(nd, probe, N_list)
    return _pairings(nd, data, np.asarray(N_list, dtype=float)).astype(complex)


def pairing_limit_target(nd: NDMap, probe: OscillatoryProbe) -> float:
    """Quadrature of int |xi|_g^{-1} eta^2 dx on the grid."""
    grid = nd.grid
    eta = probe.eta_values(grid.points)
    s = metric_norm_field(nd.metric, grid.points, probe.xi)
    return float(np.sum(grid.weights * eta ** 2 / s))


@dataclass(frozen=True)
class Extrapolation:
    limit: float
    error: float
    coefficients: np.ndarray
    condition: float
    ill_conditioned: bool


def extrapolate_limit(N_list: Sequence[float], values: Sequence[float], terms: int = 3) -> Extrapolation:
    """Least-squares fit of a + b/N + c/N^2 (first ``terms`` powers) to real values.

    The error bar is the standard error of ``a`` when the fit is overdetermined,
    and otherwise the change of ``a`` when the highest power is dropped.
    """
    N = np.asarray(N_list, dtype=float)
    y = np.real(np.asarray(values))
    if N.size < 3:
        raise ValueError("need at least 3 entries")
    terms = min(terms, N.size)
    X = np.stack([N ** -k for k in range(terms)], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    cond = float(np.linalg.cond(X))
    dof = N.size - terms
    if dof > 0:
        rss = float(np.sum((X @ coef - y) ** 2))
        cov = np.linalg.inv(X.T @ X) * rss / dof
        err = math.sqrt(max(cov[0, 0], 0.0))
    else:
        err = 0.0
    if terms > 1:
        lower, *_ = np.linalg.lstsq(X[:, :-1], y, rcond=None)
        err = max(err, abs(float(lower[0] - coef[0])) if dof == 0 else err)
    return Extrapolation(float(coef[0]), float(err), coef, cond, cond > 1e12)


# --------------------------------------------------------------------------
# metric recovery


@dataclass
class CenterEstimate:
    center: tuple
    ginv: np.ndarray
    ginv_error: np.ndarray
    q: dict = field(default_factory=dict)  # xi -> (estimate of |xi|_g^2, error)


def _covector_design(xis: np.ndarray) -> np.ndarray:
    n = xis.shape[1]
    cols = []
    for i in range(n):
        for j in range(i, n):
            cols.append(xis[:, i] * xis[:, j] * (1 if i == j else 2))
    return np.stack(cols, axis=1)


def _unpack(vec: np.ndarray, n: int) -> np.ndarray:
    G = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = vec[k]
            k += 1
    return G


def polarize(xis: Sequence[Sequence[float]], q_values: Sequence[float]) -> np.ndarray:
    """Symmetric G with xi^T G xi = q for each covector, by least squares."""
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    n = xis.shape[1]
    D = _covector_design(xis)
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise ValueError("covector family does not determine a symmetric form")
    vec, *_ = np.linalg.lstsq(D, np.asarray(q_values, dtype=float), rcond=None)
    return _unpack(vec, n)


def default_covectors(n: int) -> list[tuple]:
    """e_i and (e_i + e_j)/sqrt(2)."""
    out = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        out.append(tuple(e))
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros(n)
            e[i] = e[j] = 1 / math.sqrt(2)
            out.append(tuple(e))
    return out


def symbol_ratio(grid, ginv: np.ndarray, xi, N: float) -> float:
    """sqrt(discrete symbol / continuum symbol) of the assembled stencil at frequency N xi.

    Second differences carry (2/h) sin(k h / 2) per axis and the mixed cross
    stencil carries sin(k_i h_i) sin(k_j h_j) / (h_i h_j), with k = N xi.  The
    pairing at frequency N approximates its limit divided by this ratio.
    """
    xi = np.asarray(xi, dtype=float)
    k = N * xi
    h = np.asarray(grid.spacing)
    half = 2 / h * np.sin(k * h / 2)
    full = np.sin(k * h) / h
    n = xi.size
    disc = sum(ginv[i, i] * half[i] ** 2 for i in range(n))
    disc += sum(2 * ginv[i, j] * full[i] * full[j] for i in range(n) for j in range(i + 1, n))
    cont = N * N * float(xi @ ginv @ xi)
    return math.sqrt(disc / cont)


def recover_metric_on_gamma(nd: NDMap, centers: Sequence[Sequence[float]], bump_width: float,
                            xi_directions: Sequence[Sequence[float]] | None = None,
                            N_list: Sequence[float] | None = None, symbol_correction: bool = True,
                            iterations: int = 4) -> list[CenterEstimate]:
    """Estimate g^{ij} at each center from extrapolated pairing limits of narrow bumps.

    For each covector the limit is approximately |xi|_{g(x0)}^{-1} int eta^2, so
    q(xi) = (int eta^2 / limit)^2 estimates |xi|_g^2, and g^{ij} follows by
    polarization.  With ``symbol_correction`` each pairing is first multiplied
    by ``symbol_ratio`` at the current estimate, which removes the bias of the
    finite-difference symbol; the estimate is refined by fixed-point
    iteration.  When ``N_list`` is None, ``default_frequencies`` is used for
    each covector (the window 0.3..1 of the cap with the correction).
    """
    grid = nd.grid
    n = grid.dim
    xis = [tuple(float(v) for v in np.atleast_1d(x)) for x in (xi_directions or default_covectors(n))]
    centers = [tuple(float(v) for v in np.atleast_1d(c)) for c in centers]
    window = (0.3, 1.0) if symbol_correction else (0.15, 0.5)
    # all probe data go through the map in one batch
    blocks, freqs, masses = [], [], []
    for c in centers:
        for xi in xis:
            probe = bump_probe(c, bump_width, xi)
            Ns = list(N_list) if N_list is not None else default_frequencies(grid, xi, 4, *window)
            blocks.append(_probe_data(nd, probe, Ns))
            freqs.append(np.asarray(Ns, dtype=float))
            masses.append(float(np.sum(grid.weights * probe.eta_values(grid.points) ** 2)))
    values = _pairings(nd, np.concatenate(blocks), np.concatenate(freqs)).real
    D = _covector_design(np.asarray(xis, dtype=float))
    pinv = np.linalg.pinv(D)
    out, pos, k = [], 0, 0
    for c in centers:
        G = None
        for _ in range(iterations if symbol_correction else 1):
            q, p, kk = {}, pos, k
            for xi in xis:
                Ns = freqs[kk]
                seq = values[p:p + Ns.size]
                if G is not None:
                    seq = seq * np.array([symbol_ratio(grid, G, xi, N) for N in Ns])
                ext = extrapolate_limit(Ns, seq)
                qv = (masses[kk] / ext.limit) ** 2
                q[xi] = (qv, 2 * qv * ext.error / abs(ext.limit))
                p += Ns.size
                kk += 1
            vals = np.array([q[xi][0] for xi in xis])
            G = polarize(xis, vals)
        pos, k = p, kk
        errs = np.array([q[xi][1] for xi in xis])
        G_err = _unpack(np.sqrt((pinv ** 2) @ errs ** 2), n)
        out.append(CenterEstimate(c, G, G_err, q))
    return out


# --------------------------------------------------------------------------
# potential recovery


@dataclass(frozen=True)
class PotentialEstimate:
    estimate: float
    error: float
    raw_sequence: np.ndarray
    sign_convention: str = "estimate = -lim N <conj(phi_N), |g|^(1/2) (Lambda_1 - Lambda_2) phi_N>"


def _same_metric(a, b) -> bool:
    return a is b or a.key() == b.key()


def potential_pairings(nd_1: NDMap, nd_2: NDMap, probe: OscillatoryProbe, N_list: Sequence[float]) -> np.ndarray:
    """N <conj(phi_N), |g|^{1/2} (Lambda_1 - Lambda_2) phi_N> for each N."""
    if not _same_metric(nd_1.metric, nd_2.metric):
        raise ValueError("potential recovery needs both maps to share the metric")
    grid = nd_1.grid
    check_aliasing(grid, probe.xi, N_list)
    probe.validate(nd_1.region)
    w = grid.weights * nd_1.metric.sqrt_det(grid.points)
    out = []
    for N in N_list:
        phi = probe.neumann_data(grid, N)
        diff = nd_1(phi) - nd_2(phi)
        out.append(N * np.sum(w * np.conj(phi) * diff))
    return np.array(out, dtype=complex)


def _probe_metric(nd: NDMap, probe: OscillatoryProbe) -> np.ndarray:
    """eta^2-weighted average of g^{ij} over the probe support."""
    grid = nd.grid
    w = grid.weights * probe.eta_values(grid.points) ** 2
    return np.einsum("p,pij->ij", w, nd.metric.inverse(grid.points)) / np.sum(w)


def recover_potential_difference(nd_1: NDMap, nd_2: NDMap, probe: OscillatoryProbe,
                                 N_list: Sequence[float], symbol_correction: bool = True) -> PotentialEstimate:
    """Estimate int |g|^{1/2} (V_1 - V_2) eta^2 / (2 |xi|_g^3) dx.

    The pairings scale like the symbol to the power -3/2, so with
    ``symbol_correction`` each is multiplied by the cube of ``symbol_ratio``
    (taken at the eta^2-averaged metric) before extrapolation.
    """
    seq = potential_pairings(nd_1, nd_2, probe, N_list)
    vals = seq.real
    if symbol_correction:
        G = _probe_metric(nd_1, probe)
        vals = vals * np.array([symbol_ratio(nd_1.grid, G, probe.xi, N) ** 3 for N in N_list])
    ext = extrapolate_limit(N_list, vals)
    return PotentialEstimate(-ext.limit, ext.error, seq)


def potential_weight(nd: NDMap, probe: OscillatoryProbe) -> float:
    """int |g|^{1/2} eta^2 / (2 |xi|_g^3) dx."""
    grid = nd.grid
    s = metric_norm_field(nd.metric, grid.points, probe.xi)
    eta = probe.eta_values(grid.points)
    return float(np.sum(grid.weights * nd.metric.sqrt_det(grid.points) * eta ** 2 / (2 * s ** 3)))


def potential_difference_target(nd_1: NDMap, nd_2: NDMap, probe: OscillatoryProbe) -> float:
    grid = nd_1.grid
    dV = nd_1.potential(grid.points) - nd_2.potential(grid.points)
    s = metric_norm_field(nd_1.metric, grid.points, probe.xi)
    eta = probe.eta_values(grid.points)
    return float(np.sum(grid.weights * nd_1.metric.sqrt_det(grid.points) * dV * eta ** 2 / (2 * s ** 3)))


def recover_potential_on_gamma(nd: NDMap, nd_ref: NDMap, centers, bump_width: float, xi,
                               N_list: Sequence[float]) -> np.ndarray:
    """Pointwise V - V_ref at narrow-bump centers by division with the known weight."""
    out = []
    for c in centers:
        probe = bump_probe(c, bump_width, xi)
        est = recover_potential_difference(nd, nd_ref, probe, N_list)
        out.append(est.estimate / potential_weight(nd, probe))
    return np.array(out)
