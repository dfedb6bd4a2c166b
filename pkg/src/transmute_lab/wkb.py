"""Approximate solutions of the extension problem for oscillatory Neumann data.

For phi_N = N e^{iN x.xi} eta(x) the ansatz is

    Phi_N(x, y) = e^{iN x.xi} (psi0 + psi1/N + psi2/N^2)(x, z),   z = N y,

with each psi_k = (sum_m c_m(x) z^m) e^{-s(x) z} and s = |xi|_g.  Conjugating
the operator by the phase gives N^2 L0 - iN L1 - L2 where

    L0 = -d_z^2 + s^2,
    L1 = 2 g^{ij} xi_i d_j + (b . xi),
    L2 = g^{ij} d_i d_j + b . grad - V,
    b^j = |g|^{-1/2} d_i(|g|^{1/2} g^{ij}).

Matching powers of N yields L0 psi0 = 0, L0 psi1 = i L1 psi0 and
L0 psi2 = i L1 psi1 + L2 psi0, each with homogeneous Neumann data at z = 0
except the first, which carries eta.  The leftover terms
-N^{-1}(i L1 psi2 + L2 psi1) - N^{-2} L2 psi2 form the residual.

All coefficients are built symbolically from the metric and potential
expressions, so derivatives are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import sympy as sp

from .geometry import Grid, MetricField, PotentialField, Region, _lambdify, coords, smooth_bump

Poly = dict  # power of z -> sympy coefficient in x


@dataclass(frozen=True, eq=False)
class OscillatoryProbe:
    """Bump profile eta, covector xi and frequency N generating phi_N = N e^{iN x.xi} eta."""

    eta: sp.Expr
    xi: tuple
    N: float = 1.0
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "eta", sp.sympify(self.eta))
        xi = tuple(float(v) for v in np.atleast_1d(self.xi))
        object.__setattr__(self, "xi", xi)
        if len(xi) != self.dim:
            raise ValueError("covector dimension mismatch")
        if not any(xi):
            raise ValueError("covector must be nonzero")
        if self.N < 1:
            raise ValueError("frequency must be at least 1")

    @cached_property
    def _eta_fn(self):
        return _lambdify(self.eta, self.dim)

    def eta_values(self, points: np.ndarray) -> np.ndarray:
        return self._eta_fn(points).astype(float)

    def with_frequency(self, N: float) -> "OscillatoryProbe":
        return OscillatoryProbe(self.eta, self.xi, N, self.dim)

    def with_covector(self, xi) -> "OscillatoryProbe":
        return OscillatoryProbe(self.eta, tuple(np.atleast_1d(xi)), self.N, self.dim)

    def neumann_data(self, grid: Grid, N: float | None = None) -> np.ndarray:
        N = self.N if N is None else N
        phase = np.exp(1j * N * (grid.points @ np.asarray(self.xi)))
        return N * phase * self.eta_values(grid.points)

    def validate(self, region: Region) -> None:
        grid = region.grid
        vals = self.eta_values(grid.points)
        support = np.abs(vals) > 0
        if not np.any(support):
            return
        if np.any(support & ~region.mask):
            raise ValueError("probe support leaves the window")
        dist = region.distance_to_complement(grid.points[support])
        if np.min(dist) < 2 * grid.h * (1 - 1e-9):
            raise ValueError("probe support must stay 2h inside the window")


def bump_probe(center: Sequence[float], width: float, xi, N: float = 1.0) -> OscillatoryProbe:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    return OscillatoryProbe(smooth_bump(center, width), tuple(np.atleast_1d(xi)), N, center.size)


class _Graph:
    """Named quantities defined by small expressions in coordinates and other names.

    Every intermediate of the cascade is registered as an undefined function
    of the coordinates, so symbolic differentiation only ever touches short
    defining expressions.  Values of a quantity or of any of its partial
    derivatives are computed recursively on demand.
    """

    def __init__(self, dim: int):
        self.xs = coords(dim)
        self.defs: dict = {}
        self._compiled: dict = {}

    def define(self, name: str, expr) -> sp.Expr:
        expr = sp.sympify(expr)
        if not expr.free_symbols and not expr.atoms(sp.core.function.AppliedUndef):
            return expr
        fn = sp.Function(name)(*self.xs)
        if fn.func in self.defs:
            raise ValueError(f"quantity {name} defined twice")
        self.defs[fn.func] = expr
        return fn

    def _compile(self, expr: sp.Expr):
        key = expr
        if key not in self._compiled:
            found = [a for a in expr.atoms(sp.Derivative) if a.expr.func in self.defs]
            found += [a for a in expr.atoms(sp.core.function.AppliedUndef) if a.func in self.defs]
            found = sorted(set(found), key=sp.default_sort_key)
            dummies = [sp.Dummy() for _ in found]
            replaced = expr.xreplace(dict(zip(found, dummies)))
            fn = sp.lambdify(list(self.xs) + dummies, replaced, modules="numpy", cse=True)
            self._compiled[key] = (found, fn)
        return self._compiled[key]

    def bind(self, points: np.ndarray) -> "_Bound":
        return _Bound(self, np.atleast_2d(np.asarray(points, dtype=float)))


class _Bound:
    def __init__(self, graph: _Graph, points: np.ndarray):
        self.graph = graph
        self.points = points
        self.cache: dict = {}

    def _atom(self, atom) -> np.ndarray:
        if atom not in self.cache:
            if isinstance(atom, sp.Derivative):
                expr = self.graph.defs[atom.expr.func].diff(*atom.variable_count)
            else:
                expr = self.graph.defs[atom.func]
            self.cache[atom] = self.value(expr)
        return self.cache[atom]

    def value(self, expr) -> np.ndarray:
        expr = sp.sympify(expr)
        m = self.points.shape[0]
        found, fn = self.graph._compile(expr)
        args = [self.points[:, k] for k in range(self.points.shape[1])]
        args += [self._atom(a) for a in found]
        with np.errstate(all="ignore"):
            out = fn(*args)
        return np.broadcast_to(np.asarray(out, dtype=complex), (m,)).copy()


class _Calculus:
    """Symbolic pieces of L1, L2 for a fixed metric, potential and covector."""

    def __init__(self, graph: _Graph, g: MetricField, V: PotentialField, xi: Sequence[float]):
        n = g.dim
        self.xs = graph.xs
        self.graph = graph
        G = graph
        gm = sp.Matrix(n, n, lambda i, j: G.define(f"g{min(i, j)}{max(i, j)}", g.matrix[i, j]) if i <= j else 0)
        gm = sp.Matrix(n, n, lambda i, j: gm[min(i, j), max(i, j)])
        if n == 1:
            det = gm[0, 0]
            inv = sp.Matrix([[1 / det]])
        else:
            det = G.define("detg", gm[0, 0] * gm[1, 1] - gm[0, 1] ** 2)
            inv = sp.Matrix([[gm[1, 1], -gm[0, 1]], [-gm[0, 1], gm[0, 0]]]) / det
        self.ginv = sp.Matrix(n, n, lambda i, j: G.define(f"ginv{min(i, j)}{max(i, j)}", inv[min(i, j), max(i, j)])
                              if i <= j else 0)
        self.ginv = sp.Matrix(n, n, lambda i, j: self.ginv[min(i, j), max(i, j)])
        sq = G.define("sqrtg", sp.sqrt(det))
        self.xi = [sp.Integer(int(v)) if float(v).is_integer() else sp.Float(v) for v in xi]
        self.V = G.define("V", V.expr)
        self.n = n
        self.s = G.define("s", sp.sqrt(sum(self.ginv[i, j] * self.xi[i] * self.xi[j]
                                           for i in range(n) for j in range(n))))
        self.b = [G.define(f"b{j}", sum(sp.diff(sq * self.ginv[i, j], self.xs[i]) for i in range(n)) / sq)
                  for j in range(n)]
        self.bxi = sum(bj * x for bj, x in zip(self.b, self.xi))
        self.xds = G.define("xi_ds", self.xi_d(self.s))
        self.lap_s = G.define("lap_s", self.second(self.s))
        self.ds2 = G.define("ds2", self.dot(self.s, self.s))

    def xi_d(self, a):
        n = self.n
        return sum(self.ginv[i, j] * self.xi[i] * sp.diff(a, self.xs[j]) for i in range(n) for j in range(n))

    def second(self, a):
        """g^{ij} d_i d_j a + b . grad a."""
        n = self.n
        out = sum(self.ginv[i, j] * sp.diff(a, self.xs[i], self.xs[j]) for i in range(n) for j in range(n))
        return out + sum(self.b[j] * sp.diff(a, self.xs[j]) for j in range(n))

    def dot(self, a, c):
        n = self.n
        return sum(self.ginv[i, j] * sp.diff(a, self.xs[i]) * sp.diff(c, self.xs[j])
                   for i in range(n) for j in range(n))

    def L1(self, a):
        return 2 * self.xi_d(a) + self.bxi * a

    def L2(self, a):
        return self.second(a) - self.V * a

    def L1_poly(self, p: Poly) -> Poly:
        """L1 of sum a_m z^m e^{-sz}: the z-dependence enters through e^{-s z}."""
        out: Poly = {}
        for m, a in p.items():
            out[m] = out.get(m, 0) + self.L1(a)
            out[m + 1] = out.get(m + 1, 0) - 2 * a * self.xds
        return out

    def L2_poly(self, p: Poly) -> Poly:
        out: Poly = {}
        for m, a in p.items():
            out[m] = out.get(m, 0) + self.L2(a)
            out[m + 1] = out.get(m + 1, 0) - (a * self.lap_s + 2 * self.dot(a, self.s))
            out[m + 2] = out.get(m + 2, 0) + a * self.ds2
        return out


def _add(p: Poly, q: Poly, cp=1, cq=1) -> Poly:
    out: Poly = {}
    for m in set(p) | set(q):
        out[m] = cp * p.get(m, 0) + cq * q.get(m, 0)
    return out


def _L0_poly(p: Poly, s) -> Poly:
    """(-d_z^2 + s^2) acting on sum a_m z^m e^{-sz}."""
    out: Poly = {}
    for m, a in p.items():
        if m >= 2:
            out[m - 2] = out.get(m - 2, 0) - m * (m - 1) * a
        if m >= 1:
            out[m - 1] = out.get(m - 1, 0) + 2 * m * s * a
    return out


class WkbSolution:
    """Coefficient cascade and residual bands of the approximate solution.

    Named coefficients (eta_t, f1, f2, h0..h2, F1..F4, H0..H4) are available
    as symbolic definitions in ``exprs`` and numerically via
    ``coefficient(name, points)``.
    """

    def __init__(self, g: MetricField, V: PotentialField, probe: OscillatoryProbe):
        if probe.dim != g.dim or V.dim != g.dim:
            raise ValueError("probe, metric and potential dimensions differ")
        self.metric, self.potential, self.probe = g, V, probe
        G = _Graph(g.dim)
        self.graph = G
        c = _Calculus(G, g, V, probe.xi)
        self.calc = c
        s = c.s
        eta = G.define("eta", probe.eta)
        eta_t = G.define("eta_t", eta / s)
        f1 = G.define("f1", sp.I * c.L1(eta_t))
        f2 = G.define("f2", -2 * sp.I * eta_t * c.xds)
        h2 = G.define("h2", f2 / (4 * s))
        h1 = G.define("h1", f1 / (2 * s) + f2 / (4 * s ** 2))
        h0 = G.define("h0", h1 / s)
        psi0: Poly = {0: eta_t}
        psi1: Poly = {0: h0, 1: h1, 2: h2}
        rhs = _add(c.L1_poly(psi1), c.L2_poly(psi0), sp.I, 1)
        F = [G.define(f"F{m + 1}", rhs.get(m, 0)) for m in range(4)]
        H4 = G.define("H4", F[3] / (8 * s))
        H3 = G.define("H3", (2 * s * F[2] + 3 * F[3]) / (12 * s ** 2))
        H2 = G.define("H2", (2 * s ** 2 * F[1] + 2 * s * F[2] + 3 * F[3]) / (8 * s ** 3))
        H1 = G.define("H1", (4 * s ** 3 * F[0] + 2 * s ** 2 * F[1] + 2 * s * F[2] + 3 * F[3]) / (8 * s ** 4))
        H0 = G.define("H0", H1 / s)
        psi2: Poly = {0: H0, 1: H1, 2: H2, 3: H3, 4: H4}
        self.psi = (psi0, psi1, psi2)
        self.exprs = {
            "s": s, "eta_t": eta_t, "f1": f1, "f2": f2, "h0": h0, "h1": h1, "h2": h2,
            "F1": F[0], "F2": F[1], "F3": F[2], "F4": F[3],
            "H0": H0, "H1": H1, "H2": H2, "H3": H3, "H4": H4,
        }
        self.definitions = {k: G.defs.get(getattr(v, "func", None), v) for k, v in self.exprs.items()}
        # residual bands: R = e^{iN x.xi} (A/N + B/N^2), A and B z-polynomials times e^{-sz}
        self.band1 = {m: -v for m, v in _add(c.L1_poly(psi2), c.L2_poly(psi1), sp.I, 1).items()}
        self.band2 = {m: -v for m, v in c.L2_poly(psi2).items()}
        self._bound = None

    def _bind(self, points: np.ndarray) -> _Bound:
        if self._bound is None or self._bound[0] is not points:
            self._bound = (points, self.graph.bind(points))
        return self._bound[1]

    def values(self, expr, points: np.ndarray) -> np.ndarray:
        return self._bind(points).value(expr)

    def coefficient(self, name: str, points: np.ndarray) -> np.ndarray:
        return self.values(self.exprs[name], points)

    def _poly_values(self, poly: Poly, points: np.ndarray) -> dict:
        return {m: self.values(e, points) for m, e in poly.items()}

    def psi_values(self, points: np.ndarray) -> list[dict]:
        return [self._poly_values(p, points) for p in self.psi]

    def phi(self, points: np.ndarray, y, N: float | None = None) -> np.ndarray:
        """Phi_N at points x (shape (m, n)) and heights y (scalar or shape (m,))."""
        N = self.probe.N if N is None else N
        s = self.coefficient("s", points).real
        z = N * np.asarray(y, dtype=float)
        total = np.zeros(points.shape[0], dtype=complex)
        for k, vals in enumerate(self.psi_values(points)):
            total += N ** (-k) * sum(v * z ** m for m, v in vals.items())
        phase = np.exp(1j * N * (points @ np.asarray(self.probe.xi)))
        return phase * total * np.exp(-s * z)

    def closure_residuals(self, points: np.ndarray) -> dict:
        """Relative defects of the algebraic systems fixing h and H."""
        v = {k: self.coefficient(k, points) for k in self.exprs}
        s = v["s"]
        big = lambda *keys: max(max(float(np.max(np.abs(v[k]))) for k in keys), 1e-300)
        scale_F = big("F1", "F2", "F3", "F4")
        scale_f = big("f1", "f2")
        return {
            "H0=H1/s": float(np.max(np.abs(v["H0"] - v["H1"] / s))) / big("H0"),
            "h0=h1/s": float(np.max(np.abs(v["h0"] - v["h1"] / s))) / big("h0"),
            "F1": float(np.max(np.abs(2 * (s * v["H1"] - v["H2"]) - v["F1"]))) / scale_F,
            "F2": float(np.max(np.abs(4 * s * v["H2"] - 6 * v["H3"] - v["F2"]))) / scale_F,
            "F3": float(np.max(np.abs(6 * s * v["H3"] - 12 * v["H4"] - v["F3"]))) / scale_F,
            "F4": float(np.max(np.abs(8 * s * v["H4"] - v["F4"]))) / scale_F,
            "f1": float(np.max(np.abs(2 * s * v["h1"] - 2 * v["h2"] - v["f1"]))) / scale_f,
            "f2": float(np.max(np.abs(4 * s * v["h2"] - v["f2"]))) / scale_f,
        }

    def cascade_residuals(self, points: np.ndarray) -> dict:
        """Defects of the three ODE levels, z-polynomial coefficients evaluated numerically."""
        c = self.calc
        psi0, psi1, psi2 = self.psi
        checks = {
            "L0 psi0": (_L0_poly(psi0, c.s), {}),
            "L0 psi1 - i L1 psi0": (_L0_poly(psi1, c.s), {m: sp.I * v for m, v in c.L1_poly(psi0).items()}),
            "L0 psi2 - i L1 psi1 - L2 psi0": (_L0_poly(psi2, c.s), _add(c.L1_poly(psi1), c.L2_poly(psi0), sp.I, 1)),
        }
        out = {}
        zero = np.zeros(points.shape[0], dtype=complex)
        for name, (lhs, rhs) in checks.items():
            lv = self._poly_values(lhs, points)
            rv = self._poly_values(rhs, points)
            keys = set(lv) | set(rv)
            diff = max((float(np.max(np.abs(lv.get(m, zero) - rv.get(m, zero)))) for m in keys), default=0.0)
            scale = max([float(np.max(np.abs(d.get(m, zero)))) for d in (lv, rv) for m in keys] + [0.0])
            out[name] = diff / scale if scale > 0 else diff
        return out

    def band_values(self, points: np.ndarray) -> tuple[dict, dict]:
        return self._poly_values(self.band1, points), self._poly_values(self.band2, points)

    def residual(self, points: np.ndarray, y, N: float) -> np.ndarray:
        """(-Delta_g - d_y^2 + V) Phi_N at (x, y) assembled from the residual bands."""
        s = self.coefficient("s", points).real
        z = N * np.asarray(y, dtype=float)
        b1, b2 = self.band_values(points)
        total = sum(v * z ** m for m, v in b1.items()) / N + sum(v * z ** m for m, v in b2.items()) / N ** 2
        phase = np.exp(1j * N * (points @ np.asarray(self.probe.xi)))
        return phase * total * np.exp(-s * z)


def build_wkb(g: MetricField, V: PotentialField, probe: OscillatoryProbe, region: Region | None = None) -> WkbSolution:
    """Construct the cascade; with ``region`` the probe support is checked against it."""
    if region is not None:
        probe.validate(region)
    return WkbSolution(g, V, probe)


@dataclass(frozen=True)
class ResidualReport:
    N: np.ndarray
    stretched: np.ndarray  # L^2 in (x, z = N y)
    lebesgue: np.ndarray   # L^2 in (x, y)
    slope: float
    slope_lebesgue: float


def _z_moment(p: int, two_s: np.ndarray) -> np.ndarray:
    """int_0^inf z^p e^{-2 s z} dz = p! / (2s)^{p+1}."""
    return math.factorial(p) / two_s ** (p + 1)


def wkb_residual(sol: WkbSolution, grid: Grid, y_max: float, N_list: Sequence[float]) -> ResidualReport:
    """L^2 norms of the residual over Omega x (0, y_max) for each N.

    The z-integrals are taken in closed form over (0, inf); the precondition
    y_max * N * min|xi|_g >= 20 makes the discarded tail negligible.  Norms are
    reported in the stretched variable z = N y (the amplitude of the boundary
    layer) and in the plain (x, y) measure; the fitted slopes of log-norm
    against log N are returned for both.
    """
    N_arr = np.asarray(N_list, dtype=float)
    pts = grid.points
    w = grid.weights
    s = sol.coefficient("s", pts).real
    if N_arr.min() * y_max * s.min() < 20:
        raise ValueError("y_max too small: need y_max * N * min|xi|_g >= 20")
    b1, b2 = sol.band_values(pts)
    for vals in (b1, b2):
        for v in vals.values():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError("residual evaluation produced non-finite values")
    degree = max(max(b1), max(b2))
    zero = np.zeros(pts.shape[0], dtype=complex)
    two_s = 2 * s
    norms = []
    for N in N_arr:
        C = [b1.get(m, zero) / N + b2.get(m, zero) / N ** 2 for m in range(degree + 1)]
        acc = np.zeros(pts.shape[0])
        for m in range(degree + 1):
            for k in range(degree + 1):
                acc += np.real(np.conj(C[m]) * C[k]) * _z_moment(m + k, two_s)
        norms.append(math.sqrt(max(float(np.sum(w * acc)), 0.0)))
    stretched = np.array(norms)
    lebesgue = stretched / np.sqrt(N_arr)
    if np.all(stretched > 0):
        slope = float(np.polyfit(np.log(N_arr), np.log(stretched), 1)[0])
        slope_l = float(np.polyfit(np.log(N_arr), np.log(lebesgue), 1)[0])
    else:
        slope = slope_l = float("nan")
    return ResidualReport(N_arr, stretched, lebesgue, slope, slope_l)


def wkb_neumann_check(sol: WkbSolution, grid: Grid, N: float | None = None) -> dict:
    """max |-d_y Phi_N(x, 0) - phi_N(x)| relative to max |phi_N|, real and imaginary parts."""
    N = sol.probe.N if N is None else N
    pts = grid.points
    s = sol.coefficient("s", pts).real
    total = np.zeros(pts.shape[0], dtype=complex)
    for k, vals in enumerate(sol.psi_values(pts)):
        zero = np.zeros(pts.shape[0], dtype=complex)
        dz = vals.get(1, zero) - s * vals.get(0, zero)  # d_z of (sum a_m z^m) e^{-sz} at z = 0
        total += N ** (-k) * dz
    phase = np.exp(1j * N * (pts @ np.asarray(sol.probe.xi)))
    neumann = -N * phase * total
    target = sol.probe.neumann_data(grid, N)
    scale = max(float(np.max(np.abs(target))), 1e-300)
    diff = neumann - target
    return {
        "real": float(np.max(np.abs(diff.real)) / scale),
        "imag": float(np.max(np.abs(diff.imag)) / scale),
        "max": float(np.max(np.abs(diff)) / scale),
    }
