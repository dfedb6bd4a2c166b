"""Wave-to-heat transmutation, wave measurement maps and a leapfrog oracle.

The Kannai identity writes the heat semigroup as a Gaussian average of the
sine propagator,

    e^{-t lambda^2} = (1 / (4 sqrt(pi) t^{3/2})) int_0^inf e^{-tau/(4t)} sin(sqrt(tau) lambda)/lambda dtau.

With tau = sigma^2 the weight becomes the Gaussian sigma e^{-sigma^2/(4t)}
and the integrand is smooth in sigma, so composite Gauss-Legendre panels on
(0, sigma_max) converge spectrally once each panel holds about one
oscillation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sps

from .calculus import QuadratureRule, _check_vanishing, wave_trajectory
from .geometry import Grid, MetricField, PotentialField, Region
from .operators import DiscreteOperator, SpectralDecomposition, assemble
from .resolvent import spectral_bounds

GAUSS_CUTOFF = 33.0  # e^{-33} < 1e-14


# --------------------------------------------------------------------------
# Kannai transform


def sigma_panel_rule(t: float, omega_max: float, order: int = 16, per_panel: float = 1.0) -> QuadratureRule:
    """Gauss-Legendre panels on (0, sigma_max) with sigma_max^2 = 4 t * 33.

    The panel count covers both the Gaussian width ~ sqrt(t) and the fastest
    oscillation sin(sigma omega_max), with ``per_panel`` radians/pi per panel.
    """
    if t <= 0 or omega_max <= 0:
        raise ValueError("need t > 0 and a positive frequency")
    s_max = math.sqrt(4 * t * GAUSS_CUTOFF)
    panels = int(math.ceil(max(8.0, s_max * omega_max / (math.pi * per_panel))))
    edges = np.linspace(0.0, s_max, panels + 1)
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return QuadratureRule("sigma-gauss-panels", nodes, weights, 0.0, s_max)


def _kannai_weights(omega: np.ndarray, t: float, q: QuadratureRule) -> np.ndarray:
    """(1/(2 sqrt(pi) t^{3/2})) int sigma e^{-sigma^2/4t} sin(sigma omega)/omega dsigma per omega."""
    s, w = q.nodes, q.weights
    gauss = w * s * np.exp(-s * s / (4 * t))
    out = np.empty_like(omega)
    chunk = max(1, 2_000_000 // max(s.size, 1))
    for a in range(0, omega.size, chunk):
        om = omega[a:a + chunk]
        out[a:a + chunk] = (gauss @ np.sin(np.outer(s, om))) / om
    return out / (2 * math.sqrt(math.pi) * t ** 1.5)


@dataclass(frozen=True)
class KannaiResult:
    lhs: float
    rhs: float
    error_estimate: float


def scalar_kannai(lam: float, t: float, q: QuadratureRule | None = None) -> KannaiResult:
    """Both sides of e^{-t lam^2} = (1/(4 sqrt(pi) t^{3/2})) int e^{-tau/4t} sin(sqrt(tau) lam)/lam dtau.

    The error estimate compares the rule with one of doubled panel density.
    """
    if lam <= 0 or t <= 0:
        raise ValueError("need lam > 0 and t > 0")
    om = np.array([float(lam)])
    if q is None:
        q = sigma_panel_rule(t, lam)
        fine = sigma_panel_rule(t, lam, per_panel=0.5)
        rhs = float(_kannai_weights(om, t, q)[0])
        err = abs(float(_kannai_weights(om, t, fine)[0]) - rhs)
    else:
        rhs = float(_kannai_weights(om, t, q)[0])
        err = float("nan")
    return KannaiResult(math.exp(-t * lam * lam), rhs, err)


def kannai_heat_from_wave(spec: SpectralDecomposition, f: np.ndarray, t: float,
                          q: QuadratureRule | None = None) -> np.ndarray:
    """e^{-tP} f assembled from the sine propagator P^{-1/2} sin(sigma P^{1/2}) f.

    Each mode is weighted by the sigma-quadrature of the Gaussian average, so
    the result is sum_j w_j sigma_j e^{-sigma_j^2/4t} (sine propagator at sigma_j) f.
    """
    if t <= 0:
        raise ValueError("heat time must be positive")
    f = _check_vanishing(spec, f)
    omega = np.sqrt(spec.eigenvalues)
    q = q or sigma_panel_rule(t, float(omega.max()))
    weights = _kannai_weights(omega, t, q)
    return spec.apply_function(lambda lam: weights, f)


# --------------------------------------------------------------------------
# wave source-to-solution map


@dataclass(frozen=True)
class WaveTrace:
    """Values of a wave field on selected nodes over a time mesh."""

    times: np.ndarray
    nodes: np.ndarray  # full-grid node indices
    values: np.ndarray  # shape (len(times), len(nodes))


def _sample_source(F, times: np.ndarray, num_nodes: int) -> np.ndarray:
    if F is None:
        return np.zeros((times.size, num_nodes))
    if callable(F):
        return np.stack([np.asarray(F(tau), dtype=float) for tau in times])
    F = np.asarray(F, dtype=float)
    if F.shape != (times.size, num_nodes):
        raise ValueError("sampled source must have shape (len(times), nodes)")
    return F


def wave_source_to_solution(spec: SpectralDecomposition, F, region: Region, T: float,
                            n_time: int = 401) -> WaveTrace:
    """J^Gamma F: the zero-data wave solution with source F, observed on the window.

    ``F`` is a callable tau -> grid function or an array sampled on
    linspace(0, T, n_time); its spatial support must lie in the window.
    """
    if T <= 0:
        raise ValueError("final time must be positive")
    times = np.linspace(0.0, T, n_time)
    Fs = _sample_source(F, times, spec.grid.num_nodes)
    if not region.contains_support(Fs, 0.0):
        raise ValueError("source must be supported in the window")
    traj = wave_trajectory(spec, None, None, Fs, times)
    fields = spec.synthesize(traj.coefficients)
    nodes = region.members
    return WaveTrace(times, nodes, fields[:, nodes])


# --------------------------------------------------------------------------
# leapfrog oracle


def stable_step(op: DiscreteOperator, safety: float = 0.9) -> float:
    """safety * 2 / sqrt(lambda_max) for the explicit central scheme."""
    return safety * 2.0 / math.sqrt(spectral_bounds(op)[1])


@dataclass(frozen=True)
class LeapfrogTrajectory:
    times: np.ndarray
    values: np.ndarray  # full-grid states, shape (len(times), nodes)
    energy: np.ndarray  # staggered energy at half steps t_{n+1/2}

    @property
    def energy_drift(self) -> float:
        e = self.energy
        if e.size == 0 or e[0] == 0:
            return 0.0
        return float(np.max(np.abs(e - e[0])) / abs(e[0]))


def _leapfrog_core(op: DiscreteOperator, w0: np.ndarray, w1: np.ndarray, force: Callable[[int], np.ndarray],
                   dt: float, steps: int, record: Callable[[int, np.ndarray], None]) -> np.ndarray:
    """Central differences M (w^{n+1} - 2 w^n + w^{n-1}) / dt^2 + A w^n = b^n on the active set.

    ``force(n)`` returns b^n / mass (an acceleration).  Returns the staggered energies.
    """
    A = op.A
    m = op.mass
    acc0 = force(0) - (A @ w0) / m
    prev = w0
    cur = w0 + dt * w1 + 0.5 * dt * dt * acc0
    record(0, prev)
    record(1, cur)
    energy = np.empty(steps)
    energy[0] = _staggered_energy(A, m, prev, cur, dt)
    for n in range(1, steps):
        nxt = 2 * cur - prev + dt * dt * (force(n) - (A @ cur) / m)
        prev, cur = cur, nxt
        record(n + 1, cur)
        energy[n] = _staggered_energy(A, m, prev, cur, dt)
    return energy


def _staggered_energy(A, m, prev, cur, dt) -> float:
    v = (cur - prev) / dt
    return float(np.sum(m * v * v) + cur @ (A @ prev))


def wave_leapfrog(op: DiscreteOperator, F, dt: float, T: float, w0: np.ndarray | None = None,
                  w1: np.ndarray | None = None, record_every: int = 1) -> LeapfrogTrajectory:
    """Leapfrog for M w'' + A w = M F with Dirichlet conditions.

    ``F`` is None, a callable tau -> grid function, or an array sampled on the
    step mesh.  The step must satisfy dt <= 0.9 * 2 / sqrt(lambda_max).  With
    F = 0 the staggered energy ||(w^{n+1} - w^n)/dt||_M^2 + (w^{n+1})^T A w^n
    is conserved exactly up to rounding.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("need T > 0 and dt > 0")
    limit = stable_step(op)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"time step {dt:.4g} exceeds the stability bound {limit:.4g}")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * T:
        raise ValueError("T must be an integer multiple of dt")
    n = op.grid.num_nodes
    zeros = np.zeros(n)
    a0 = op.to_active(zeros if w0 is None else w0).astype(float)
    a1 = op.to_active(zeros if w1 is None else w1).astype(float)
    for label, u in (("w0", w0), ("w1", w1)):
        if u is not None and np.max(np.abs(np.asarray(u)[op.inactive]), initial=0) > 0:
            raise ValueError(f"{label} must vanish on the Dirichlet nodes")
    times_all = dt * np.arange(steps + 1)
    if F is None:
        def force(k):
            return 0.0
    elif callable(F):
        def force(k):
            return op.to_active(np.asarray(F(times_all[k]), dtype=float))
    else:
        Fa = op.to_active(np.asarray(F, dtype=float))
        if Fa.shape[0] < steps + 1:
            raise ValueError("sampled source must cover every step")

        def force(k):
            return Fa[k]
    keep = list(range(0, steps + 1, record_every))
    if keep[-1] != steps:
        keep.append(steps)
    index = {k: i for i, k in enumerate(keep)}
    out = np.zeros((len(keep), op.size))

    def record(k, w):
        i = index.get(k)
        if i is not None:
            out[i] = w

    energy = _leapfrog_core(op, a0, a1, force, dt, steps, record)
    return LeapfrogTrajectory(times_all[keep], op.to_grid(out), energy)


# --------------------------------------------------------------------------
# restricted wave DN map on the window boundary


@dataclass(frozen=True)
class EdgeGeometry:
    """Side nodes of the window edge with the outward (from the window) axis direction."""

    nodes: np.ndarray  # edge nodes where the normal is an axis direction
    axis: np.ndarray
    sign: np.ndarray  # +1 / -1: the exterior lies in direction sign * e_axis
    skipped: np.ndarray  # corner nodes


def edge_geometry(region: Region) -> EdgeGeometry:
    grid = region.grid
    shape = grid.shape
    mask = region.mask.reshape(shape)
    nodes, axes, signs, skipped = [], [], [], []
    for e in region.edge:
        idx = np.unravel_index(e, shape)
        dirs = []
        for ax in range(grid.dim):
            for sg in (-1, 1):
                j = list(idx)
                j[ax] += sg
                if not mask[tuple(j)]:
                    dirs.append((ax, sg))
        if len(dirs) != 1:
            skipped.append(e)
            continue
        ax, sg = dirs[0]
        for step in (1, 2):
            j = list(idx)
            j[ax] += sg * step
            if not 0 < j[ax] < shape[ax] - 1 or mask[tuple(j)]:
                raise ValueError("need two exterior nodes off each window side")
        nodes.append(e)
        axes.append(ax)
        signs.append(sg)
    return EdgeGeometry(np.array(nodes, dtype=int), np.array(axes, dtype=int), np.array(signs, dtype=int),
                        np.array(skipped, dtype=int))


@dataclass(frozen=True)
class DNTrace:
    times: np.ndarray
    nodes: np.ndarray  # edge nodes with a well-defined axis normal
    values: np.ndarray  # conormal derivative, shape (len(times), len(nodes))
    skipped: np.ndarray


def restricted_dn_wave(grid: Grid, g: MetricField, V: PotentialField, region: Region, f, T: float,
                       dt: float | None = None, record_every: int = 1) -> DNTrace:
    """Dirichlet data f on the window edge -> conormal derivative of the exterior wave field.

    The field solves (d_t^2 - Delta_g + V) w = 0 on the exterior of the closed
    window with w = f on the window edge, w = 0 on the outer boundary and zero
    Cauchy data.  The data enter through the coupling block of the exterior
    operator, which is the discrete lifting of f.  The derivative is
    nu_i g^{ij} d_j w / |nu|_g with nu the unit normal of the exterior
    pointing into the window, using one-sided second-order differences in
    the normal direction and central differences along the edge.

    ``f`` is a callable t -> values on ``region.edge`` or an array of shape
    (steps + 1, len(region.edge)) on the step mesh.
    """
    op = assemble(grid, g, V, exclude=region.members)
    dt = dt or stable_step(op)
    steps = int(math.ceil(T / dt - 1e-9))
    dt = T / steps
    times = dt * np.arange(steps + 1)
    edge = region.edge
    if callable(f):
        data = np.stack([np.asarray(f(tau), dtype=float) for tau in times])
    else:
        data = np.asarray(f, dtype=float)
    if data.shape != (steps + 1, edge.size):
        raise ValueError(f"edge data must have shape ({steps + 1}, {edge.size})")
    scale = float(np.max(np.abs(data), initial=0.0))
    if scale and np.max(np.abs(data[0])) > 1e-12 * scale:
        raise ValueError("edge data must vanish at t = 0")

    C = op.coupling[:, edge].tocsr()
    m = op.mass

    def force(k):
        return -(C @ data[k]) / m

    geo = edge_geometry(region)
    keep = list(range(0, steps + 1, record_every))
    if keep[-1] != steps:
        keep.append(steps)
    index = {k: i for i, k in enumerate(keep)}
    out = np.zeros((len(keep), geo.nodes.size))
    pos = {int(e): i for i, e in enumerate(edge)}
    deriv = _conormal_stencil(grid, g, region, geo, pos)

    def record(k, w):
        i = index.get(k)
        if i is not None:
            full = np.zeros(grid.num_nodes)
            full[op.active] = w
            full[edge] = data[k]
            out[i] = deriv @ full

    zero = np.zeros(op.size)
    _leapfrog_core(op, zero, zero, force, dt, steps, record)
    return DNTrace(times[keep], geo.nodes, out, geo.skipped)


def _conormal_stencil(grid: Grid, g: MetricField, region: Region, geo: EdgeGeometry, pos: dict) -> sps.csr_matrix:
    """Sparse rows mapping a full-grid field to nu_i g^{ij} d_j w / |nu|_g at the side nodes."""
    shape = grid.shape
    h = grid.spacing
    ginv = g.inverse(grid.points[geo.nodes])
    rows, cols, vals = [], [], []
    for r, (e, ax, sg) in enumerate(zip(geo.nodes, geo.axis, geo.sign)):
        idx = np.unravel_index(e, shape)
        G = ginv[r]
        # nu points from the exterior into the window: -sg e_ax
        norm = math.sqrt(G[ax, ax])
        # d along +sg e_ax from the exterior side: (-3 w0 + 4 w1 - w2) / (2h)
        j1 = list(idx)
        j1[ax] += sg
        j2 = list(idx)
        j2[ax] += 2 * sg
        c_norm = -G[ax, ax] / norm  # nu_ax = -sg, times sg from the direction
        for node, w in ((e, -3.0), (np.ravel_multi_index(j1, shape), 4.0), (np.ravel_multi_index(j2, shape), -1.0)):
            rows.append(r)
            cols.append(node)
            vals.append(c_norm * w / (2 * h[ax]))
        for tax in range(grid.dim):
            if tax == ax:
                continue
            c_tan = -sg * G[ax, tax] / norm
            for d in (-1, 1):
                j = list(idx)
                j[tax] += d
                rows.append(r)
                cols.append(np.ravel_multi_index(j, shape))
                vals.append(c_tan * d / (2 * h[tax]))
    return sps.csr_matrix((vals, (rows, cols)), shape=(geo.nodes.size, grid.num_nodes))


# --------------------------------------------------------------------------
# heat moments


@dataclass(frozen=True)
class HeatMoments:
    k: np.ndarray
    values: np.ndarray  # shape (k_max + 1, len(window nodes))
    nodes: np.ndarray

    @property
    def max_abs(self) -> np.ndarray:
        return np.max(np.abs(self.values), axis=1)


def heat_moment_vanish(spec_1: SpectralDecomposition, spec_2: SpectralDecomposition, f: np.ndarray,
                       source: Region, window: Region, k_max: int = 3) -> HeatMoments:
    """int_0^inf [(e^{-tP_1} - e^{-tP_2}) f](x) t^{-k-1/2} dt for x in the window, k = 0..k_max.

    Per mode the integral is Gamma(1/2 - k) lambda^{k - 1/2}; the difference of
    the two operators is finite for every k because the window is disjoint from
    the support of f.
    """
    if not 0 <= k_max <= 4:
        raise ValueError("k_max must lie in 0..4")
    if spec_1.grid.key() != spec_2.grid.key():
        raise ValueError("decompositions live on different grids")
    if np.any(source.mask & window.mask):
        raise ValueError("source set and observation window must be disjoint")
    if not source.contains_support(np.asarray(f), 0.0):
        raise ValueError("f must be supported in the source set")
    nodes = window.members
    vals = []
    for k in range(k_max + 1):
        p = k - 0.5
        d = spec_1.apply_function(lambda lam: lam ** p, f) - spec_2.apply_function(lambda lam: lam ** p, f)
        vals.append(math.gamma(0.5 - k) * d[nodes])
    return HeatMoments(np.arange(k_max + 1), np.array(vals), nodes)


def heat_moment_quadrature(spec_1: SpectralDecomposition, spec_2: SpectralDecomposition, f: np.ndarray,
                           window: Region, k: int, t_min: float = 1e-8, t_max: float | None = None,
                           panels_per_decade: int = 4) -> np.ndarray:
    """Direct t-quadrature of the k-th moment (log-variable Gauss panels), an oracle for small k."""
    from .calculus import log_panel_rule, heat_apply
    lam_min = min(spec_1.gap, spec_2.gap)
    t_max = t_max or 60.0 / lam_min
    q = log_panel_rule(t_min, t_max, panel_width=math.log(10) / panels_per_decade)
    nodes = window.members
    acc = np.zeros(nodes.size)
    for t, w in zip(q.nodes, q.weights):
        d = heat_apply(spec_1, t, f) - heat_apply(spec_2, t, f)
        acc += w * t ** (-k - 0.5) * d[nodes]
    return acc
