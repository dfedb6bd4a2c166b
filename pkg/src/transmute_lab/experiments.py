"""Named experiments with tolerance gates, and the acceptance battery.

Each runner takes a validated ``ExperimentConfig`` and returns an
``ExperimentResult`` holding table rows, gates and optional traces.  Gates
carry the acceptance criterion they belong to (C1 .. C12).  Semantic checks
that need no numerics live in ``validate`` and raise ``ConfigError``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import sympy as sp

from . import boundary, calculus, extension, transmute, wkb
from .config import ExperimentConfig
from .geometry import (Grid, MetricField, PotentialField, Region, bump_deformation, build_grid, identity_map,
                       pullback, smooth_bump, _lambdify)
from .cache import cached_eigendecompose
from .operators import assemble
from .presets import make_metric, make_potential
from .resolvent import InverseRootSolver


class ConfigError(ValueError):
    """A config that parses but cannot be run (reported before any numerics)."""


@dataclass(frozen=True)
class Gate:
    criterion: str
    name: str
    value: float
    threshold: float
    relation: str  # "<=", ">=", or "in" (threshold, upper)
    upper: float = float("nan")

    @property
    def passed(self) -> bool:
        v = self.value
        if not math.isfinite(v):
            return False
        if self.relation == "<=":
            return v <= self.threshold
        if self.relation == ">=":
            return v >= self.threshold
        return self.threshold <= v <= self.upper


@dataclass
class ExperimentResult:
    experiment_id: str
    experiment: str
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)
    gates: list[Gate] = field(default_factory=list)
    traces: list[tuple[str, float, int, float]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    timing_gates: list[Gate] = field(default_factory=list)
    plots: dict[str, tuple[np.ndarray, np.ndarray, str, str]] = field(default_factory=dict)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(g.passed for g in self.gates + self.timing_gates)

    def failing(self) -> list[str]:
        out = [g.name for g in self.gates + self.timing_gates if not g.passed]
        if self.error:
            out.append(f"exception: {self.error}")
        return out


# --------------------------------------------------------------------------
# shared helpers


def _grid(cfg: ExperimentConfig, nodes=None) -> Grid:
    return build_grid([list(b) for b in cfg.grid.domain], nodes or cfg.grid.node_counts())


def _fields(cfg: ExperimentConfig) -> tuple[MetricField, PotentialField]:
    dim = cfg.grid.dim
    return (make_metric(cfg.metric.preset, dim, **cfg.metric.params),
            make_potential(cfg.potential.preset, dim, **cfg.potential.params))


def _window(cfg: ExperimentConfig, grid: Grid, key: str | None = None) -> Region:
    bounds = cfg.params.get(key) if key else (cfg.window.bounds if cfg.window else None)
    if bounds is None:
        raise ConfigError(f"experiment {cfg.experiment} needs a window" + (f" ({key})" if key else ""))
    return Region.box(grid, bounds)


def _tol(cfg: ExperimentConfig, name: str, default: float) -> float:
    return float(cfg.tolerances.get(name, default))


def seeded_bumps(grid: Grid, rng: np.random.Generator, count: int = 4, region: Region | None = None) -> np.ndarray:
    """A random smooth grid function: a superposition of smooth bumps.

    Centers, radii and amplitudes are drawn from ``rng``; with ``region`` the
    bumps are kept inside its bounding box so the support stays in the window.
    """
    lo = np.array(grid.lower, dtype=float)
    hi = np.array(grid.upper, dtype=float)
    if region is not None and region.bounds is not None:
        lo = np.array([b[0] for b in region.bounds])
        hi = np.array([b[1] for b in region.bounds])
    span = hi - lo
    out = np.zeros(grid.num_nodes)
    for _ in range(count):
        r = float(rng.uniform(0.15, 0.35) * span.min())
        c = lo + r + rng.uniform(0, 1, size=grid.dim) * np.maximum(span - 2 * r, 0)
        out += rng.uniform(0.5, 1.5) * _lambdify(smooth_bump(c, r), grid.dim)(grid.points)
    out[grid.boundary_mask] = 0.0
    if region is not None:
        out[~region.mask] = 0.0
    return out


def smooth_modal_data(spec, rng: np.random.Generator, modes: int = 8) -> np.ndarray:
    """Random smooth data: a combination of the lowest modes with amplitudes decaying like 1/k^2."""
    k = np.arange(1, modes + 1)
    c = np.zeros(spec.eigenvalues.size)
    c[:modes] = rng.standard_normal(modes) / k ** 2
    return spec.synthesize(c)


def window_bump(grid: Grid, region: Region, fraction: float) -> np.ndarray:
    """Smooth bump centred in a box window, radius ``fraction`` of its smallest side."""
    lo = np.array([b[0] for b in region.bounds])
    hi = np.array([b[1] for b in region.bounds])
    f = _lambdify(smooth_bump((lo + hi) / 2, fraction * float(np.min(hi - lo))), grid.dim)(grid.points)
    f[~region.mask] = 0.0
    return f


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _analytic_box_spectrum(cfg: ExperimentConfig, g: MetricField, V: PotentialField, count: int) -> np.ndarray:
    if not (g.is_constant and g.is_diagonal and V.is_constant):
        raise ConfigError("spectrum-check needs a constant diagonal metric and a constant potential")
    ginv = np.diag(g.inverse(np.zeros((1, g.dim)))[0])
    v0 = float(V(np.zeros((1, g.dim)))[0])
    lengths = [b - a for a, b in cfg.grid.domain]
    m = count + 2
    grids = np.meshgrid(*[np.arange(1, m + 1)] * g.dim, indexing="ij")
    lam = sum(gi * (np.pi * k / L) ** 2 for gi, k, L in zip(ginv, grids, lengths)) + v0
    return np.sort(lam.ravel())[:count]


# --------------------------------------------------------------------------
# experiments


def spectrum_check(cfg: ExperimentConfig) -> ExperimentResult:
    """First k eigenvalues against the closed-form box spectrum (criterion 1)."""
    k_count = int(cfg.params.get("k_count", 10))
    g, V = _fields(cfg)
    exact = _analytic_box_spectrum(cfg, g, V, k_count)
    t0 = time.perf_counter()
    grid = _grid(cfg)
    spec = cached_eigendecompose(assemble(grid, g, V))
    elapsed = time.perf_counter() - t0
    lam = spec.eigenvalues[:k_count]
    rel = np.abs(lam - exact) / exact
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["k", "lambda_k", "exact", "rel_err"])
    res.rows = [[k + 1, lam[k], exact[k], rel[k]] for k in range(k_count)]
    res.gates.append(Gate("C1", "spectrum max rel err", float(rel.max()), _tol(cfg, "rel_err", 5e-3), "<="))
    res.timings["eigendecomposition_s"] = elapsed
    res.timing_gates.append(Gate("C1", "spectrum runtime s", elapsed, _tol(cfg, "runtime_s", 5.0), "<="))
    res.plots["rel_err"] = (np.arange(1, k_count + 1), rel, "k", "relative error")
    return res


def extension_check(cfg: ExperimentConfig) -> ExperimentResult:
    """T^2 = P on random data and the cylinder oracle against the ND map (criterion 2)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    grid = _grid(cfg)
    g, V = _fields(cfg)
    op = assemble(grid, g, V)
    spec = cached_eigendecompose(op)
    region = _window(cfg, grid)
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["check", "sample", "value"])
    worst = 0.0
    for j in range(int(cfg.params.get("samples", 5))):
        f = seeded_bumps(grid, rng, 4)
        TT = extension.dn_operator(spec, extension.dn_operator(spec, f))
        err = _rel(TT, op.apply(f))
        worst = max(worst, err)
        res.rows.append(["T^2 - P", j, err])
    res.gates.append(Gate("C2", "T^2 = P rel err", worst, _tol(cfg, "square", 1e-10), "<="))

    decay = float(cfg.params.get("decay", 1e-8))
    y_nodes = int(cfg.params.get("y_nodes", 257))
    Y = math.log(1.0 / decay) / math.sqrt(spec.gap) * 1.05
    f = seeded_bumps(grid, rng, 3, region)
    cyl = extension.solve_cylinder_direct(grid, g, V, f, Y, y_nodes, spec=spec, decay_tol=decay)
    nd = extension.nd_map(spec, f, region)
    w = grid.weights * region.mask
    diff = math.sqrt(np.sum(w * (cyl.trace() - nd) ** 2) / np.sum(w * nd ** 2))
    res.rows += [["cylinder height Y", 0, Y], ["cylinder vs nd_map rel L2", 0, diff],
                 ["cylinder solve residual", 0, cyl.residual]]
    res.gates.append(Gate("C2", "cylinder trace vs nd_map rel L2", diff, _tol(cfg, "cylinder", 0.02), "<="))
    elapsed = time.perf_counter() - t0
    res.timings["total_s"] = elapsed
    res.timing_gates.append(Gate("C2", "extension runtime s", elapsed, _tol(cfg, "runtime_s", 60.0), "<="))
    return res


def semigroup_check(cfg: ExperimentConfig) -> ExperimentResult:
    """Semigroup integrals for P^{-1/2} and P^{1/2} against the spectral powers (criterion 3)."""
    grid = _grid(cfg)
    g, V = _fields(cfg)
    spec = cached_eigendecompose(assemble(grid, g, V))
    count = int(cfg.params.get("modes", 5))
    tests = [(f"mode {k + 1}", spec.mode(k)) for k in range(count)]
    tests.append(("mode sum", sum(spec.mode(k) * (k + 1) for k in range(count))))
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["data", "power", "rel_err", "quad_err_est"])
    worst = 0.0
    for name, u in tests:
        for s_pow, fn in ((-0.5, calculus.neg_power_via_semigroup), (0.5, calculus.frac_power_via_semigroup)):
            got, est = fn(spec, abs(s_pow), u, full_output=True)
            err = _rel(got, calculus.frac_power_apply(spec, s_pow, u))
            worst = max(worst, err)
            res.rows.append([name, s_pow, err, est])
    res.gates.append(Gate("C3", "semigroup vs spectral rel err", worst, _tol(cfg, "rel_err", 1e-6), "<="))
    return res


def kannai_check(cfg: ExperimentConfig) -> ExperimentResult:
    """Scalar and operator Kannai identities (criteria 4 and 5)."""
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["kind", "lambda_or_t", "t", "lhs", "rhs", "err"])
    worst = 0.0
    for lam in cfg.params.get("lambdas", [1.0, 2.0, 5.0]):
        for t in cfg.params.get("scalar_times", [0.1, 1.0]):
            r = transmute.scalar_kannai(lam, t)
            err = abs(r.lhs - r.rhs)
            worst = max(worst, err)
            res.rows.append(["scalar", lam, t, r.lhs, r.rhs, err])
    res.gates.append(Gate("C4", "scalar Kannai abs err", worst, _tol(cfg, "scalar", 1e-8), "<="))

    grid = _grid(cfg)
    g, V = _fields(cfg)
    spec = cached_eigendecompose(assemble(grid, g, V))
    rng = np.random.default_rng(cfg.seed)
    f = seeded_bumps(grid, rng, 4) + spec.mode(0) + spec.mode(3)
    worst = 0.0
    for t in cfg.params.get("operator_times", [0.1, 0.5, 1.0]):
        a = transmute.kannai_heat_from_wave(spec, f, t)
        b = calculus.heat_apply(spec, t, f)
        err = _rel(a, b)
        worst = max(worst, err)
        res.rows.append(["operator", float("nan"), t, float(np.linalg.norm(b)), float(np.linalg.norm(a)), err])
    res.gates.append(Gate("C5", "operator Kannai rel err", worst, _tol(cfg, "operator", 1e-4), "<="))
    return res


def wkb_order(cfg: ExperimentConfig) -> ExperimentResult:
    """Residual decay order and closure identities of the WKB cascade (criterion 6)."""
    grid = _grid(cfg)
    g, V = _fields(cfg)
    if cfg.probe is None or not cfg.probe.centers or not cfg.probe.xi:
        raise ConfigError("wkb-order needs a probe with a center and a covector")
    region = _window(cfg, grid)
    probe = wkb.bump_probe(cfg.probe.centers[0], cfg.probe.width, cfg.probe.xi[0])
    sol = wkb.build_wkb(g, V, probe, region)
    N_list = cfg.probe.N or [8, 16, 32, 64]
    s_min = float(np.min(sol.coefficient("s", grid.points).real))
    y_max = 25.0 / (min(N_list) * s_min)
    rep = wkb.wkb_residual(sol, grid, y_max, N_list)
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["N", "residual_stretched", "residual_lebesgue", "ratio"])
    prev = None
    for N, r, rl in zip(rep.N, rep.stretched, rep.lebesgue):
        res.rows.append([N, r, rl, float("nan") if prev is None else r / prev])
        prev = r
    lo, hi = cfg.params.get("slope_range", [-1.3, -0.7])
    res.gates.append(Gate("C6", "residual log-log slope", rep.slope, float(lo), "in", float(hi)))
    closure = sol.closure_residuals(grid.points)
    cascade = sol.cascade_residuals(grid.points)
    identities = {**closure, **cascade}
    for name, v in identities.items():
        res.rows.append([f"identity {name}", v, float("nan"), float("nan")])
    res.gates.append(Gate("C6", "cascade closure identities", max(identities.values()),
                          _tol(cfg, "closure", 1e-12), "<="))
    neu = wkb.wkb_neumann_check(sol, grid, N_list[0])
    res.rows.append(["neumann data defect", neu["max"], float("nan"), float("nan")])
    res.plots["residual"] = (rep.N, rep.stretched, "N", "residual norm")
    return res


def _nd_source(cfg: ExperimentConfig, grid: Grid, g, V, jobs: int = 1):
    op = assemble(grid, g, V)
    solver = cfg.params.get("solver", "auto")
    if solver == "resolvent" or (solver == "auto" and grid.dim == 2 and not _separable(op)):
        return InverseRootSolver(op, tol=float(cfg.params.get("resolvent_tol", 1e-7)), jobs=jobs)
    return cached_eigendecompose(op)


def _separable(op) -> bool:
    from .operators import _is_separable
    return _is_separable(op)


def boundary_recover(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Pairing limits (criterion 7) or metric recovery under joint refinement (criterion 8)."""
    task = cfg.params.get("task", "pairing-limit")
    if cfg.probe is None or not cfg.probe.centers:
        raise ConfigError("boundary-recover needs probe centers")
    g, V = _fields(cfg)
    if task == "pairing-limit":
        return _pairing_limit(cfg, g, V, jobs)
    if task == "metric":
        return _metric_recovery(cfg, g, V, jobs)
    raise ConfigError(f"unknown boundary-recover task {task!r}")


def _pairing_limit(cfg, g, V, jobs) -> ExperimentResult:
    grid = _grid(cfg)
    region = _window(cfg, grid)
    nd = extension.NDMap(_nd_source(cfg, grid, g, V, jobs), region)
    xis = cfg.probe.xi or [[1.0] + [0.0] * (grid.dim - 1)]
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["xi", "N", "pairing_re", "pairing_im", "target"])
    worst, worst_im = 0.0, 0.0
    for xi in xis:
        probe = wkb.bump_probe(cfg.probe.centers[0], cfg.probe.width, xi)
        Ns = cfg.probe.N or boundary.default_frequencies(grid, xi)
        cap = boundary.max_frequency(grid, xi)
        seq = boundary.pairing_sequence(nd, probe, list(Ns) + ([cap] if cap > Ns[-1] * (1 + 1e-9) else []))
        target = boundary.pairing_limit_target(nd, probe)
        ext = boundary.extrapolate_limit(Ns, seq[:len(Ns)].real)
        label = " ".join(f"{v:g}" for v in xi)
        for N, p in zip(list(Ns) + [cap], seq):
            res.rows.append([label, N, p.real, p.imag, target])
        res.rows.append([label, "limit", ext.limit, ext.error, target])
        worst = max(worst, abs(ext.limit - target) / target)
        worst_im = max(worst_im, abs(seq[-1].imag) / abs(ext.limit))
    res.gates.append(Gate("C7", f"pairing limit rel err ({cfg.experiment_id})", worst, _tol(cfg, "limit", 0.05), "<="))
    res.gates.append(Gate("C7", f"imaginary part at max N ({cfg.experiment_id})", worst_im,
                          _tol(cfg, "imag", 0.01), "<="))
    return res


def _entry_errors(est, g) -> tuple[float, np.ndarray]:
    G = g.inverse(np.array([est.center]))[0]
    rel = np.abs(est.ginv - G) / np.abs(G)
    return float(rel.max()), G


def _metric_recovery(cfg, g, V, jobs) -> ExperimentResult:
    levels = cfg.params.get("refinement") or [[cfg.grid.node_counts()[0], cfg.probe.width]]
    res = ExperimentResult(cfg.experiment_id, cfg.experiment,
                           ["level", "nodes", "width", "center", "entry", "estimate", "true", "error_bar", "rel_err"])
    errs = []
    spd = True
    for li, (nodes, width) in enumerate(levels):
        grid = _grid(cfg, int(nodes))
        region = _window(cfg, grid)
        nd = extension.NDMap(_nd_source(cfg, grid, g, V, jobs), region)
        est = boundary.recover_metric_on_gamma(nd, cfg.probe.centers, float(width), cfg.probe.xi or None,
                                               cfg.probe.N)
        worst = 0.0
        for e in est:
            err, G = _entry_errors(e, g)
            worst = max(worst, err)
            spd &= bool(np.allclose(e.ginv, e.ginv.T) and np.all(np.linalg.eigvalsh(e.ginv) > 0))
            n = G.shape[0]
            for i in range(n):
                for j in range(i, n):
                    res.rows.append([li, nodes, width, " ".join(f"{c:g}" for c in e.center), f"g^{i + 1}{j + 1}",
                                     e.ginv[i, j], G[i, j], e.ginv_error[i, j],
                                     abs(e.ginv[i, j] - G[i, j]) / abs(G[i, j])])
        errs.append(worst)
    res.gates.append(Gate("C8", "metric max entrywise rel err (finest)", errs[-1], _tol(cfg, "entry", 0.10), "<="))
    if len(errs) > 1:
        improve = min(a - b for a, b in zip(errs, errs[1:]))
        res.gates.append(Gate("C8", "monotone improvement across resolutions", improve, 0.0, ">="))
    res.gates.append(Gate("C8", "recovered g^ij symmetric positive definite", float(spd), 1.0, ">="))
    res.plots["max_rel_err"] = (np.arange(len(errs)), np.array(errs), "refinement level", "max entrywise rel err")
    return res


def potential_recover(cfg: ExperimentConfig) -> ExperimentResult:
    """Potential-difference limit and the identical-map zero case (criterion 9)."""
    grid = _grid(cfg)
    g, V1 = _fields(cfg)
    ref = cfg.params.get("reference", {"preset": "zero-potential", "params": {}})
    V2 = make_potential(ref["preset"], grid.dim, **ref.get("params", {}))
    if cfg.probe is None or not cfg.probe.centers:
        raise ConfigError("potential-recover needs a probe center")
    region = _window(cfg, grid)
    nd1 = extension.NDMap(cached_eigendecompose(assemble(grid, g, V1)), region)
    nd2 = extension.NDMap(cached_eigendecompose(assemble(grid, g, V2)), region)
    nd1b = extension.NDMap(cached_eigendecompose(assemble(grid, g, V1)), region)
    xi = (cfg.probe.xi or [[1.0] + [0.0] * (grid.dim - 1)])[0]
    probe = wkb.bump_probe(cfg.probe.centers[0], cfg.probe.width, xi)
    Ns = cfg.probe.N or boundary.default_frequencies(grid, xi, 4, 0.3, 1.0)
    est = boundary.recover_potential_difference(nd1, nd2, probe, Ns)
    target = boundary.potential_difference_target(nd1, nd2, probe)
    scale = boundary.potential_weight(nd1, probe)
    zero = boundary.recover_potential_difference(nd1, nd1b, probe, Ns)
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["quantity", "N", "value"])
    for N, p in zip(Ns, est.raw_sequence):
        res.rows.append(["N <conj(phi), |g|^1/2 (L1 - L2) phi>", N, p.real])
    res.rows += [["estimate (sign flipped)", float("nan"), est.estimate], ["error bar", float("nan"), est.error],
                 ["analytic target", float("nan"), target], ["probe scale", float("nan"), scale],
                 ["zero case estimate", float("nan"), zero.estimate]]
    rel = abs(est.estimate - target) / abs(target) if target else float("inf")
    res.gates.append(Gate("C9", "potential limit rel err", rel, _tol(cfg, "limit", 0.10), "<="))
    res.gates.append(Gate("C9", "zero case / probe scale", abs(zero.estimate) / scale, _tol(cfg, "zero", 1e-3), "<="))
    return res


# -- gauge pairs --------------------------------------------------------------


def _diffeo(cfg: ExperimentConfig):
    d = cfg.diffeomorphism
    domain = [list(b) for b in cfg.grid.domain]
    if d is None or d.kind == "identity":
        return identity_map(domain, [list(b) for b in d.frozen] if d and d.frozen else None)
    return bump_deformation(domain, d.center, d.radius, d.amplitude, [list(b) for b in d.frozen])


def _smooth_pulse(t: float, center: float, radius: float) -> float:
    r = (t - center) / radius
    return math.exp(1 - 1 / (1 - r * r)) if abs(r) < 1 else 0.0


def gauge_discrepancies(grid: Grid, g, V, g2, V2, region: Region, params: dict) -> dict[str, float]:
    """Relative discrepancies of the window measurements between two field pairs."""
    s1 = cached_eigendecompose(assemble(grid, g, V))
    s2 = cached_eigendecompose(assemble(grid, g2, V2))
    f = window_bump(grid, region, 0.42)
    out = {}
    a, b = extension.nd_map(s1, f, region), extension.nd_map(s2, f, region)
    out["nd_map"] = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
    a = extension.source_to_solution_nonlocal(s1, f, region)
    b = extension.source_to_solution_nonlocal(s2, f, region)
    out["source_to_solution"] = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
    m = region.members
    i1, i2 = np.searchsorted(s1.op.active, m), np.searchsorted(s2.op.active, m)
    for t in params.get("heat_times", [0.05, 0.2, 1.0]):
        K1 = calculus.heat_kernel(s1, t)[np.ix_(i1, i1)]
        K2 = calculus.heat_kernel(s2, t)[np.ix_(i2, i2)]
        out[f"heat_kernel t={t:g}"] = float(np.max(np.abs(K1 - K2)) / np.max(np.abs(K1)))
    T = float(params.get("wave_time", 4.0))

    def F(tau):
        return f * _smooth_pulse(tau, 1.0, 0.9)

    n_time = int(params.get("wave_samples", 801))
    j1 = transmute.wave_source_to_solution(s1, F, region, T, n_time)
    j2 = transmute.wave_source_to_solution(s2, F, region, T, n_time)
    out["wave_source_to_solution"] = float(np.max(np.abs(j1.values - j2.values)) / np.max(np.abs(j1.values)))
    if params.get("dn_map", True):
        Td = float(params.get("dn_time", 3.0))
        ext1 = assemble(grid, g, V, exclude=region.members)
        ext2 = assemble(grid, g2, V2, exclude=region.members)
        dt = min(transmute.stable_step(ext1), transmute.stable_step(ext2))
        ones = np.ones(region.edge.size)

        def fe(tau):
            return ones * _smooth_pulse(tau, 1.0, 0.9)

        d1 = transmute.restricted_dn_wave(grid, g, V, region, fe, Td, dt=dt)
        d2 = transmute.restricted_dn_wave(grid, g2, V2, region, fe, Td, dt=dt)
        out["restricted_dn_wave"] = float(np.max(np.abs(d1.values - d2.values)) / np.max(np.abs(d1.values)))
    return out


SPECTRAL_MAPS = ("nd_map", "source_to_solution", "heat_kernel", "wave_source_to_solution")


def gauge_invariance(cfg: ExperimentConfig) -> ExperimentResult:
    """Forward-map invariance under a diffeomorphism frozen on the window (criterion 10)."""
    g, V = _fields(cfg)
    psi = _diffeo(cfg)
    g2, V2 = pullback(psi, g, V)
    is_id = cfg.diffeomorphism is None or cfg.diffeomorphism.kind == "identity"
    resolutions = cfg.params.get("resolutions") or [cfg.grid.node_counts()[0]]
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["quantity", "nodes", "discrepancy", "order"])
    table = []
    for n in resolutions:
        grid = _grid(cfg, int(n))
        psi.validate(grid)
        table.append(gauge_discrepancies(grid, g, V, g2, V2, _window(cfg, grid), cfg.params))
    for key in table[0]:
        vals = [d[key] for d in table]
        for i, (n, v) in enumerate(zip(resolutions, vals)):
            order = float("nan")
            if i and v > 0 and vals[i - 1] > 0:
                order = math.log(vals[i - 1] / v) / math.log((n - 1) / (resolutions[i - 1] - 1))
            res.rows.append([key, n, v, order])
        if is_id:
            res.gates.append(Gate("C10", f"identity gauge {key}", max(vals), _tol(cfg, "identity", 1e-12), "<="))
        else:
            if len(vals) < 2:
                raise ConfigError("gauge-invariance with a nontrivial map needs two resolutions")
            order = math.log(vals[-2] / vals[-1]) / math.log((resolutions[-1] - 1) / (resolutions[-2] - 1))
            res.gates.append(Gate("C10", f"refinement order {key}", order, _tol(cfg, "order", 1.5), ">="))
    return res


def heat_moments(cfg: ExperimentConfig) -> ExperimentResult:
    """Heat-moment vanishing for a gauge pair and a potential-perturbed control (criterion 11)."""
    grid = _grid(cfg)
    g, V = _fields(cfg)
    psi = _diffeo(cfg)
    psi.validate(grid)
    g2, V2 = pullback(psi, g, V)
    ctrl = cfg.params.get("control", {"amplitude": 0.5, "center": None, "radius": 0.12})
    source = _window(cfg, grid, "source")
    window = _window(cfg, grid, "observation")
    region = _window(cfg, grid)
    c_center = ctrl.get("center") or [float(np.mean([b for b in bb])) for bb in cfg.params["observation"]]
    V3 = PotentialField(V.expr + sp.Float(ctrl["amplitude"]) * smooth_bump(c_center, ctrl["radius"]), grid.dim,
                        "control")
    k_max = int(cfg.params.get("k_max", 3))
    s1 = cached_eigendecompose(assemble(grid, g, V))
    s2 = cached_eigendecompose(assemble(grid, g2, V2))
    s3 = cached_eigendecompose(assemble(grid, g, V3))
    f = window_bump(grid, source, 0.48)
    base = [float(np.max(np.abs(math.gamma(0.5 - k) * s1.apply_function(lambda l: l ** (k - 0.5), f)[window.members])))
            for k in range(k_max + 1)]
    gauge = transmute.heat_moment_vanish(s1, s2, f, source, window, k_max).max_abs / base
    control = transmute.heat_moment_vanish(s1, s3, f, source, window, k_max).max_abs / base
    disc = gauge_discrepancies(grid, g, V, g2, V2, region, {**cfg.params, "dn_map": False})
    level = max(v for k, v in disc.items() if k.split(" ")[0] in SPECTRAL_MAPS)
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["k", "gauge_rel", "control_rel", "level"])
    for k in range(k_max + 1):
        res.rows.append([k, gauge[k], control[k], level])
    res.gates.append(Gate("C11", "gauge moments / discrepancy level", float(gauge.max() / level), 1.0, "<="))
    res.gates.append(Gate("C11", "control k=0 moment / discrepancy level", float(control[0] / level),
                          _tol(cfg, "control_factor", 10.0), ">="))
    return res


def wave_check(cfg: ExperimentConfig) -> ExperimentResult:
    """Spectral wave propagator against leapfrog, and energy conservation (criterion 12)."""
    grid = _grid(cfg)
    g, V = _fields(cfg)
    op = assemble(grid, g, V)
    spec = cached_eigendecompose(op)
    rng = np.random.default_rng(cfg.seed)
    w0 = smooth_modal_data(spec, rng)
    w1 = smooth_modal_data(spec, rng)
    T = float(cfg.params.get("T", 5.0))
    dt = transmute.stable_step(op)
    samples = int(cfg.params.get("samples", 50))
    every = int(math.ceil(T / dt / samples))
    steps = every * samples
    dt = T / steps
    res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["case", "t", "rel_err", "energy_drift"])

    # free evolution
    lf = transmute.wave_leapfrog(op, None, dt, T, w0=w0, w1=w1, record_every=every)
    traj = calculus.wave_trajectory(spec, w0, w1, None, lf.times)
    ref = spec.synthesize(traj.coefficients)
    norm = np.max(np.linalg.norm(ref, axis=1))
    errs = np.linalg.norm(lf.values - ref, axis=1) / norm
    lam = spec.eigenvalues
    energy = np.sum(traj.velocities ** 2 + lam * traj.coefficients ** 2, axis=1)
    spec_drift = float(np.max(np.abs(energy - energy[0])) / energy[0])
    for t, e in zip(lf.times, errs):
        res.rows.append(["free", t, e, float("nan")])
    res.rows.append(["free energy drift spectral", T, float("nan"), spec_drift])
    res.rows.append(["free energy drift leapfrog", T, float("nan"), lf.energy_drift])

    # forced evolution from rest with a source smooth in time
    src = seeded_bumps(grid, rng, 2)

    def F(tau):
        return src * _smooth_pulse(tau, 1.5, 1.2)

    lf_f = transmute.wave_leapfrog(op, F, dt, T, record_every=steps)
    ref_f = calculus.wave_propagate(spec, None, None, F, T, n_time=4001)
    err_f = _rel(lf_f.values[-1], ref_f)
    res.rows.append(["forced", T, err_f, float("nan")])

    obs = np.linspace(0, grid.num_nodes - 1, 7).astype(int)[1:-1]
    for t, row_lf, row_sp in zip(lf.times, lf.values, ref):
        for node in obs:
            res.traces.append((f"{cfg.experiment_id}:leapfrog", float(t), int(node), float(row_lf[node])))
            res.traces.append((f"{cfg.experiment_id}:spectral", float(t), int(node), float(row_sp[node])))
    tol = _tol(cfg, "rel_err", 1e-3)
    res.gates.append(Gate("C12", "leapfrog vs spectral rel err (free)", float(errs.max()), tol, "<="))
    res.gates.append(Gate("C12", "leapfrog vs spectral rel err (forced)", err_f, tol, "<="))
    res.gates.append(Gate("C12", "spectral energy drift", spec_drift, _tol(cfg, "spectral_drift", 1e-8), "<="))
    res.gates.append(Gate("C12", "leapfrog energy drift", lf.energy_drift, _tol(cfg, "leapfrog_drift", 1e-6), "<="))
    res.plots["rel_err"] = (lf.times, errs, "t", "relative error")
    return res


RUNNERS: dict[str, Callable[..., ExperimentResult]] = {
    "spectrum-check": spectrum_check,
    "extension-check": extension_check,
    "semigroup-check": semigroup_check,
    "kannai-check": kannai_check,
    "wkb-order": wkb_order,
    "boundary-recover": boundary_recover,
    "potential-recover": potential_recover,
    "gauge-invariance": gauge_invariance,
    "wave-check": wave_check,
    "heat-moments": heat_moments,
}

NEEDS_WINDOW = {"extension-check", "wkb-order", "boundary-recover", "potential-recover", "gauge-invariance",
                "heat-moments"}


def validate(cfg: ExperimentConfig) -> None:
    """Semantic checks that need field construction but no numerics."""
    try:
        g, V = _fields(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid field parameters: {exc}") from exc
    grids = [_grid(cfg)]
    if cfg.experiment == "boundary-recover" and cfg.params.get("refinement"):
        grids = [_grid(cfg, int(n)) for n, _ in cfg.params["refinement"]]
    if cfg.experiment == "gauge-invariance" and cfg.params.get("resolutions"):
        grids = [_grid(cfg, int(n)) for n in cfg.params["resolutions"]]
    if cfg.experiment in NEEDS_WINDOW:
        for grid in grids:
            try:
                _window(cfg, grid)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
    if cfg.probe is not None and cfg.probe.N is not None and cfg.experiment != "wkb-order":
        for grid in grids:
            for xi in cfg.probe.xi or [[1.0] + [0.0] * (grid.dim - 1)]:
                try:
                    boundary.check_aliasing(grid, xi, cfg.probe.N)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc
    if cfg.experiment == "spectrum-check":
        _analytic_box_spectrum(cfg, g, V, int(cfg.params.get("k_count", 10)))
    if cfg.params.get("solver", "auto") not in ("auto", "resolvent", "spectral"):
        raise ConfigError("params.solver must be auto, resolvent or spectral")
    if cfg.experiment == "boundary-recover" and cfg.params.get("task", "pairing-limit") not in ("pairing-limit",
                                                                                                 "metric"):
        raise ConfigError("params.task must be pairing-limit or metric")
    if cfg.experiment == "heat-moments":
        for key in ("source", "observation"):
            if key not in cfg.params:
                raise ConfigError(f"heat-moments needs params.{key}")
    if cfg.diffeomorphism is not None:
        try:
            psi = _diffeo(cfg)
            for grid in grids:
                psi.validate(grid)
        except ValueError as exc:
            raise ConfigError(f"invalid diffeomorphism: {exc}") from exc


def run(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Validate, then run; numerical exceptions are captured in the result."""
    validate(cfg)
    runner = RUNNERS[cfg.experiment]
    try:
        if cfg.experiment == "boundary-recover":
            return runner(cfg, jobs=jobs)
        return runner(cfg)
    except ConfigError:
        raise
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        res = ExperimentResult(cfg.experiment_id, cfg.experiment, ["quantity", "value"])
        res.error = f"{type(exc).__name__}: {exc}"
        return res


# --------------------------------------------------------------------------
# the acceptance battery

PI = math.pi


def acceptance_configs() -> list[dict]:
    """One JSON-ready config per acceptance run; together they cover C1 .. C12."""
    line = [[0.0, PI]]
    square = [[0.0, PI], [0.0, PI]]
    unit = [[0.0, 1.0], [0.0, 1.0]]
    mid = [[0.4, PI - 0.4]]
    bump_1d = {"kind": "bump", "center": [2.4], "radius": 0.5, "amplitude": [0.15], "frozen": [[0.8, 1.8]]}
    gauss = {"preset": "gaussian-potential", "params": {"amplitude": 1.0, "center": 1.5, "width": 0.5}}
    return [
        {"experiment": "spectrum-check", "id": "c01-spectrum", "grid": {"domain": line, "nodes": 513},
         "params": {"k_count": 10}},
        {"experiment": "extension-check", "id": "c02-extension", "grid": {"domain": line, "nodes": 129},
         "window": {"bounds": [[0.8, 2.3]]}, "params": {"y_nodes": 257, "decay": 1e-8}},
        {"experiment": "semigroup-check", "id": "c03-semigroup", "grid": {"domain": line, "nodes": 257},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss},
        {"experiment": "kannai-check", "id": "c04-c05-kannai", "grid": {"domain": line, "nodes": 257},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss},
        {"experiment": "wkb-order", "id": "c06-wkb", "grid": {"domain": line, "nodes": 513},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss, "window": {"bounds": [[0.2, PI - 0.2]]},
         "probe": {"centers": [[PI / 2]], "width": 1.3, "xi": [[4.0]], "N": [8, 16, 32, 64]}},
        {"experiment": "boundary-recover", "id": "c07-pairing-1d-identity", "grid": {"domain": line, "nodes": 513},
         "window": {"bounds": mid}, "probe": {"centers": [[PI / 2]], "width": 1.0, "xi": [[1.0], [2.0]]}},
        {"experiment": "boundary-recover", "id": "c07-pairing-1d-diagonal", "grid": {"domain": line, "nodes": 513},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss, "window": {"bounds": mid},
         "probe": {"centers": [[PI / 2]], "width": 1.0, "xi": [[1.0]]}},
        {"experiment": "boundary-recover", "id": "c07-pairing-2d-identity", "grid": {"domain": square, "nodes": 129},
         "window": {"bounds": mid * 2}, "potential": {"preset": "gaussian-potential",
                                                     "params": {"amplitude": 0.0, "base": 1.0}},
         "probe": {"centers": [[PI / 2, PI / 2]], "width": 1.0, "xi": [[1.0, 0.0], [0.6, 0.8]]}},
        {"experiment": "boundary-recover", "id": "c07-pairing-2d-diagonal", "grid": {"domain": square, "nodes": 129},
         "metric": {"preset": "diagonal-poly"}, "window": {"bounds": mid * 2},
         "probe": {"centers": [[PI / 2, PI / 2]], "width": 1.0, "xi": [[1.0, 0.0], [0.6, 0.8]]}},
        {"experiment": "boundary-recover", "id": "c08-metric-2d-offdiag", "grid": {"domain": unit, "nodes": 129},
         "metric": {"preset": "offdiag-bump"},
         "potential": {"preset": "gaussian-potential", "params": {"amplitude": 0.0, "base": 1.0}},
         "window": {"bounds": [[0.1, 0.9], [0.1, 0.9]]},
         "probe": {"centers": [[0.5, 0.5], [0.42, 0.56], [0.58, 0.44]], "width": 0.2},
         "params": {"task": "metric", "refinement": [[97, 0.25], [129, 0.2]]}},
        {"experiment": "potential-recover", "id": "c09-potential", "grid": {"domain": line, "nodes": 513},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss, "window": {"bounds": mid},
         "probe": {"centers": [[PI / 2]], "width": 1.0, "xi": [[1.0]]}},
        {"experiment": "gauge-invariance", "id": "c10-gauge-bump", "grid": {"domain": line, "nodes": 129},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss, "window": {"bounds": [[1.0, 1.6]]},
         "diffeomorphism": bump_1d, "params": {"resolutions": [129, 257]}},
        {"experiment": "gauge-invariance", "id": "c10-gauge-identity", "grid": {"domain": line, "nodes": 129},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss, "window": {"bounds": [[1.0, 1.6]]},
         "diffeomorphism": {"kind": "identity"}, "params": {"resolutions": [129]}},
        {"experiment": "heat-moments", "id": "c11-heat-moments", "grid": {"domain": line, "nodes": 257},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss, "window": {"bounds": [[1.0, 1.6]]},
         "diffeomorphism": bump_1d,
         "params": {"source": [[1.0, 1.25]], "observation": [[1.35, 1.6]], "k_max": 3,
                    "control": {"amplitude": 0.5, "center": [1.45], "radius": 0.12}}},
        {"experiment": "wave-check", "id": "c12-wave", "grid": {"domain": line, "nodes": 257},
         "metric": {"preset": "diagonal-poly"}, "potential": gauss, "params": {"T": 5.0}},
    ]
