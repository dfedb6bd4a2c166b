"""Domains, measurement windows, metric and potential fields, diffeomorphisms.

Fields are sympy expressions in the coordinate symbols ``x0`` (and ``x1`` in
two dimensions).  Numeric callables are generated lazily with ``lambdify`` and
evaluate on arrays of points with shape ``(m, n)``.  Keeping the symbolic form
around lets the WKB cascade differentiate the metric to any order exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from scipy import ndimage

COORDS = sp.symbols("x0 x1", real=True)


def coords(n: int) -> tuple[sp.Symbol, ...]:
    if n not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {n}")
    return COORDS[:n]


def _select(condlist, choicelist, default=np.nan):
    # nested Piecewise (a bump composed with a bump) can hand select non-boolean conditions
    conds = [np.asarray(c).astype(bool) for c in condlist]
    return np.select(conds, choicelist, default)


def _lambdify(expr: sp.Expr, n: int) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized evaluator of a scalar expression on points of shape (m, n)."""
    fn = sp.lambdify(coords(n), expr, modules=[{"select": _select}, "numpy"], cse=True)

    def evaluate(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        with np.errstate(all="ignore"):
            out = fn(*(points[:, k] for k in range(n)))
        return np.broadcast_to(np.asarray(out), (points.shape[0],)).copy()

    return evaluate


def _as_points(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, n) if n > 1 else x.reshape(-1, 1)
    return x


def smooth_bump(center: Sequence[float], radius: float) -> sp.Expr:
    """C-infinity bump exp(1 - 1/(1 - r^2)), r = |x - center|/radius; peak 1."""
    center = tuple(float(c) for c in np.atleast_1d(center))
    if radius <= 0:
        raise ValueError("bump radius must be positive")
    xs = coords(len(center))
    r2 = sum((xk - ck) ** 2 for xk, ck in zip(xs, center)) / sp.Float(radius) ** 2
    return sp.Piecewise((sp.exp(1 - 1 / (1 - r2)), r2 < 1), (0, True))


# --------------------------------------------------------------------------
# grid and regions


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid on an axis-aligned box.

    Nodes are stored in C order (last axis fastest).  ``weights`` is the
    trapezoidal rule for dx on the closed box; nodes on the box boundary carry
    Dirichlet data and hence contribute nothing to integrals of admissible
    grid functions.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.shape)

    @cached_property
    def spacing(self) -> np.ndarray:
        return np.array([(b - a) / (m - 1) for a, b, m in zip(self.lower, self.upper, self.shape)])

    @property
    def h(self) -> float:
        return float(self.spacing.max())

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(a, b, m) for a, b, m in zip(self.lower, self.upper, self.shape))

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            index = [slice(None)] * self.dim
            index[ax] = 0
            mask[tuple(index)] = True
            index[ax] = -1
            mask[tuple(index)] = True
        return mask.ravel()

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def weights(self) -> np.ndarray:
        per_axis = []
        for m, h in zip(self.shape, self.spacing):
            w = np.full(m, h)
            w[[0, -1]] = h / 2
            per_axis.append(w)
        out = per_axis[0]
        for w in per_axis[1:]:
            out = np.multiply.outer(out, w)
        return np.asarray(out).ravel()

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.lower, self.upper)]))

    def neighbors(self, index: int) -> list[int]:
        """Flat indices of axis neighbours that exist in the grid."""
        multi = np.unravel_index(index, self.shape)
        out = []
        for ax in range(self.dim):
            for step in (-1, 1):
                j = list(multi)
                j[ax] += step
                if 0 <= j[ax] < self.shape[ax]:
                    out.append(int(np.ravel_multi_index(j, self.shape)))
        return out

    def key(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}


def build_grid(domain_spec: Sequence[Sequence[float]], nodes_per_axis) -> Grid:
    """Uniform grid on the box given as a list of (lower, upper) per axis."""
    extents = [tuple(float(v) for v in pair) for pair in domain_spec]
    n = len(extents)
    if n not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {n}")
    for pair in extents:
        if len(pair) != 2:
            raise ValueError("each axis needs (lower, upper)")
        a, b = pair
        if not (np.isfinite(a) and np.isfinite(b)) or not b > a:
            raise ValueError(f"degenerate or infinite extent {pair}")
    counts = [int(nodes_per_axis)] * n if np.isscalar(nodes_per_axis) else [int(c) for c in nodes_per_axis]
    if len(counts) != n:
        raise ValueError("nodes_per_axis does not match the dimension")
    if min(counts) < 8:
        raise ValueError("need at least 8 nodes per axis")
    return Grid(tuple(a for a, _ in extents), tuple(b for _, b in extents), tuple(counts))


@dataclass(frozen=True, eq=False)
class Region:
    """Closed measurement window as a set of grid nodes.

    ``edge`` lists the member nodes that have a grid neighbour outside the
    window; they play the role of the window boundary for the exterior wave
    problem.
    """

    grid: Grid
    members: np.ndarray
    bounds: tuple | None = None

    def __post_init__(self):
        members = np.unique(np.asarray(self.members, dtype=int))
        object.__setattr__(self, "members", members)
        if members.size == 0:
            raise ValueError("empty region")
        if np.any(self.grid.boundary_mask[members]):
            raise ValueError("region touches the boundary of the domain")
        labels, count = ndimage.label(self.mask.reshape(self.grid.shape))
        if count != 1:
            raise ValueError(f"region is not connected ({count} components)")

    @classmethod
    def from_predicate(cls, grid: Grid, predicate: Callable[[np.ndarray], np.ndarray]) -> "Region":
        return cls(grid, np.flatnonzero(np.asarray(predicate(grid.points), dtype=bool)))

    @classmethod
    def box(cls, grid: Grid, bounds: Sequence[Sequence[float]]) -> "Region":
        bounds = tuple(tuple(float(v) for v in b) for b in bounds)
        if len(bounds) != grid.dim:
            raise ValueError("box bounds do not match the grid dimension")
        tol = 1e-9 * grid.h
        inside = np.ones(grid.num_nodes, dtype=bool)
        for ax, (a, b) in enumerate(bounds):
            inside &= (grid.points[:, ax] >= a - tol) & (grid.points[:, ax] <= b + tol)
        return cls(grid, np.flatnonzero(inside), bounds)

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.num_nodes, dtype=bool)
        m[self.members] = True
        return m

    @cached_property
    def edge(self) -> np.ndarray:
        mask = self.mask
        return np.array([i for i in self.members if any(not mask[j] for j in self.grid.neighbors(i))], dtype=int)

    def contains_support(self, u: np.ndarray, tol: float = 0.0) -> bool:
        u = np.asarray(u)
        scale = np.max(np.abs(u)) if u.size else 0.0
        return bool(np.all(np.abs(u[..., ~self.mask]) <= tol * scale))

    def distance_to_complement(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from points to the nearest node outside the window."""
        outside = self.grid.points[~self.mask]
        diff = points[:, None, :] - outside[None, :, :]
        return np.sqrt((diff ** 2).sum(-1)).min(axis=1)


# --------------------------------------------------------------------------
# fields


def _inverse_and_det(g: sp.Matrix) -> tuple[sp.Matrix, sp.Expr]:
    n = g.shape[0]
    if n == 1:
        return sp.Matrix([[1 / g[0, 0]]]), g[0, 0]
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    inv = sp.Matrix([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det
    return inv, det


@dataclass(frozen=True, eq=False)
class MetricField:
    """Symmetric positive definite matrix field g_ij(x) with exact derivatives."""

    matrix: sp.ImmutableMatrix
    ellipticity: float
    name: str = "custom"

    def __post_init__(self):
        g = sp.ImmutableMatrix(self.matrix)
        object.__setattr__(self, "matrix", g)
        n = g.shape[0]
        if g.shape != (n, n) or n not in (1, 2):
            raise ValueError("metric must be a 1x1 or 2x2 matrix")
        if n == 2 and sp.simplify(g[0, 1] - g[1, 0]) != 0:
            raise ValueError("metric expression is not symmetric")
        if not 0 < self.ellipticity <= 1:
            raise ValueError("ellipticity constant must lie in (0, 1]")
        extra = g.free_symbols - set(coords(n))
        if extra:
            raise ValueError(f"metric depends on unknown symbols {extra}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def symbols(self) -> tuple[sp.Symbol, ...]:
        return coords(self.dim)

    @cached_property
    def _symbolic(self) -> dict:
        inv, det = _inverse_and_det(sp.Matrix(self.matrix))
        return {"inverse": inv, "det": det, "sqrt_det": sp.sqrt(det)}

    @property
    def inverse_expr(self) -> sp.Matrix:
        return self._symbolic["inverse"]

    @property
    def det_expr(self) -> sp.Expr:
        return self._symbolic["det"]

    @property
    def sqrt_det_expr(self) -> sp.Expr:
        return self._symbolic["sqrt_det"]

    @cached_property
    def is_constant(self) -> bool:
        return not self.matrix.free_symbols

    @cached_property
    def is_diagonal(self) -> bool:
        return self.dim == 1 or self.matrix[0, 1] == 0

    def _matrix_fn(self, mat: sp.Matrix):
        n = self.dim
        fns = [[_lambdify(mat[i, j], n) for j in range(n)] for i in range(n)]

        def evaluate(x):
            pts = _as_points(x, n)
            out = np.empty((pts.shape[0], n, n))
            for i in range(n):
                for j in range(n):
                    out[:, i, j] = fns[i][j](pts)
            return out

        return evaluate

    @cached_property
    def _g_fn(self):
        return self._matrix_fn(self.matrix)

    @cached_property
    def _ginv_fn(self):
        return self._matrix_fn(self.inverse_expr)

    @cached_property
    def _det_fn(self):
        return _lambdify(self.det_expr, self.dim)

    def __call__(self, x) -> np.ndarray:
        return self._g_fn(x)

    def inverse(self, x) -> np.ndarray:
        return self._ginv_fn(x)

    def det(self, x) -> np.ndarray:
        return self._det_fn(_as_points(x, self.dim))

    def sqrt_det(self, x) -> np.ndarray:
        return np.sqrt(self.det(x))

    def inv_sqrt_det(self, x) -> np.ndarray:
        return 1.0 / np.sqrt(self.det(x))

    @cached_property
    def _d_fns(self):
        xs = self.symbols
        return [self._matrix_fn(self.matrix.diff(xk)) for xk in xs]

    @cached_property
    def _d2_fns(self):
        xs = self.symbols
        return [[self._matrix_fn(self.matrix.diff(xk).diff(xl)) for xl in xs] for xk in xs]

    def d(self, x) -> np.ndarray:
        """First derivatives, indexed [point, i, j, k] = d_k g_ij."""
        return np.stack([fn(x) for fn in self._d_fns], axis=-1)

    def d2(self, x) -> np.ndarray:
        """Second derivatives, indexed [point, i, j, k, l] = d_k d_l g_ij."""
        return np.stack([np.stack([fn(x) for fn in row], axis=-1) for row in self._d2_fns], axis=-2)

    def check(self, grid: Grid, samples: int = 16, seed: int = 0) -> dict:
        """Verify symmetry, ellipticity and the supplied derivatives on a grid."""
        if grid.dim != self.dim:
            raise ValueError("grid and metric dimensions differ")
        pts = grid.points
        g = self(pts)
        asym = float(np.max(np.abs(g - np.swapaxes(g, 1, 2)))) if self.dim > 1 else 0.0
        rng = np.random.default_rng(seed)
        xi = rng.normal(size=(samples, self.dim))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        quad = np.einsum("si,mij,sj->ms", xi, g, xi)
        lam = self.ellipticity
        elliptic = bool(np.all(quad >= lam * (1 - 1e-12)) and np.all(quad <= (1 + 1e-12) / lam))
        # derivative check by central differences at a step tied to the grid
        pick = rng.choice(grid.interior_index, size=min(samples, grid.interior_index.size), replace=False)
        base = pts[pick]
        step = 0.5 * grid.h
        fd_err = 0.0
        d = self.d(base)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = step
            fd = (self(base + e) - self(base - e)) / (2 * step)
            fd_err = max(fd_err, float(np.max(np.abs(fd - d[..., k]))))
        return {"asymmetry": asym, "elliptic": elliptic, "fd_derivative_error": fd_err, "fd_step": step}

    def key(self) -> str:
        return sp.srepr(self.matrix)


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Scalar potential V(x) >= 0."""

    expr: sp.Expr
    dim: int
    name: str = "custom"

    def __post_init__(self):
        expr = sp.sympify(self.expr)
        object.__setattr__(self, "expr", expr)
        extra = expr.free_symbols - set(coords(self.dim))
        if extra:
            raise ValueError(f"potential depends on unknown symbols {extra}")

    @cached_property
    def _fn(self):
        return _lambdify(self.expr, self.dim)

    @cached_property
    def is_constant(self) -> bool:
        return not self.expr.free_symbols

    def __call__(self, x) -> np.ndarray:
        return self._fn(_as_points(x, self.dim)).astype(float)

    def check(self, grid: Grid) -> float:
        """Minimum of V over the grid; negative values are rejected."""
        vmin = float(np.min(self(grid.points)))
        if vmin < 0:
            raise ValueError(f"potential is negative somewhere (min {vmin:.3g})")
        return vmin

    def key(self) -> str:
        return sp.srepr(self.expr)


@dataclass(frozen=True, eq=False)
class Diffeomorphism:
    """Map Psi of the closed box onto itself, equal to the identity on ``frozen``.

    ``frozen`` is a box (list of (lower, upper)) that contains the closed
    measurement window.
    """

    components: tuple
    domain: tuple
    frozen: tuple
    name: str = "custom"

    def __post_init__(self):
        comps = tuple(sp.sympify(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "domain", tuple(tuple(float(v) for v in b) for b in self.domain))
        object.__setattr__(self, "frozen", tuple(tuple(float(v) for v in b) for b in self.frozen))
        if len(comps) != len(self.domain) or len(comps) != len(self.frozen):
            raise ValueError("diffeomorphism dimension mismatch")

    @property
    def dim(self) -> int:
        return len(self.components)

    @cached_property
    def jacobian_expr(self) -> sp.Matrix:
        xs = coords(self.dim)
        return sp.Matrix([[sp.diff(c, xj) for xj in xs] for c in self.components])

    @cached_property
    def _map_fns(self):
        return [_lambdify(c, self.dim) for c in self.components]

    @cached_property
    def _jac_fns(self):
        J = self.jacobian_expr
        return [[_lambdify(J[k, j], self.dim) for j in range(self.dim)] for k in range(self.dim)]

    def __call__(self, x) -> np.ndarray:
        pts = _as_points(x, self.dim)
        return np.stack([fn(pts) for fn in self._map_fns], axis=1)

    def jacobian(self, x) -> np.ndarray:
        """Indexed [point, k, j] = d_j Psi^k."""
        pts = _as_points(x, self.dim)
        n = self.dim
        out = np.empty((pts.shape[0], n, n))
        for k in range(n):
            for j in range(n):
                out[:, k, j] = self._jac_fns[k][j](pts)
        return out

    def inverse(self, y, tol: float = 1e-14, max_iter: int = 60) -> np.ndarray:
        """Newton iteration for Psi^{-1}(y), started from y."""
        y = _as_points(y, self.dim)
        x = y.copy()
        for _ in range(max_iter):
            r = self(x) - y
            if np.max(np.abs(r)) <= tol:
                break
            x = x - np.linalg.solve(self.jacobian(x), r[..., None])[..., 0]
        return x

    def compose(self, inner: "Diffeomorphism") -> "Diffeomorphism":
        """self o inner."""
        xs = coords(self.dim)
        sub = dict(zip(xs, inner.components))
        comps = tuple(c.subs(sub, simultaneous=True) for c in self.components)
        frozen = tuple((max(a[0], b[0]), min(a[1], b[1])) for a, b in zip(self.frozen, inner.frozen))
        return Diffeomorphism(comps, self.domain, frozen, f"{self.name}o{inner.name}")

    def validate(self, grid: Grid, tol: float = 1e-10) -> dict:
        pts = grid.points
        J = self.jacobian(pts)
        det = np.linalg.det(J)
        in_frozen = np.ones(pts.shape[0], dtype=bool)
        for ax, (a, b) in enumerate(self.frozen):
            in_frozen &= (pts[:, ax] >= a) & (pts[:, ax] <= b)
        mapped = self(pts)
        frozen_err = 0.0
        if in_frozen.any():
            frozen_err = max(
                float(np.max(np.abs(mapped[in_frozen] - pts[in_frozen]))),
                float(np.max(np.abs(J[in_frozen] - np.eye(self.dim)))),
            )
        bnd = grid.boundary_mask
        onto_err = 0.0
        for ax, (a, b) in enumerate(self.domain):
            for value in (a, b):
                on_face = bnd & np.isclose(pts[:, ax], value)
                if on_face.any():
                    onto_err = max(onto_err, float(np.max(np.abs(mapped[on_face, ax] - value))))
        inside = np.all([(mapped[:, ax] >= a - tol) & (mapped[:, ax] <= b + tol)
                         for ax, (a, b) in enumerate(self.domain)], axis=0)
        roundtrip = float(np.max(np.abs(self.inverse(mapped) - pts)))
        report = {
            "min_det": float(det.min()),
            "frozen_error": frozen_err,
            "boundary_error": onto_err,
            "maps_into_domain": bool(inside.all()),
            "inverse_error": roundtrip,
        }
        if report["min_det"] <= 0:
            raise ValueError("Jacobian determinant is not positive")
        if frozen_err > tol or onto_err > tol or not inside.all() or roundtrip > tol:
            raise ValueError(f"invalid diffeomorphism: {report}")
        return report

    def key(self) -> str:
        return sp.srepr(self.components)


def identity_map(domain: Sequence[Sequence[float]], frozen: Sequence[Sequence[float]] | None = None) -> Diffeomorphism:
    n = len(domain)
    frozen = domain if frozen is None else frozen
    return Diffeomorphism(coords(n), tuple(domain), tuple(frozen), "identity")


def bump_deformation(domain, center, radius: float, amplitude, frozen) -> Diffeomorphism:
    """Psi(x) = x + amplitude * bump((x - center)/radius).

    The bump ball must sit inside the open domain and away from the frozen
    box; invertibility needs |amplitude| * max|grad bump| < 1.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    amplitude = np.atleast_1d(np.asarray(amplitude, dtype=float))
    n = center.size
    if amplitude.size != n or len(domain) != n:
        raise ValueError("dimension mismatch in bump deformation")
    for ax, (a, b) in enumerate(domain):
        if center[ax] - radius <= a or center[ax] + radius >= b:
            raise ValueError("deformation support must lie inside the domain")
    gap = 0.0
    for ax, (a, b) in enumerate(frozen):
        gap = max(gap, a - center[ax], center[ax] - b)
    if gap <= radius:
        raise ValueError("deformation support meets the frozen region")
    # max |d/dr exp(1 - 1/(1-r^2))| over r in [0, 1)
    r = np.linspace(0, 1, 20001)[:-1]
    slope = np.max(np.abs(np.exp(1 - 1 / (1 - r ** 2)) * 2 * r / (1 - r ** 2) ** 2))
    if np.linalg.norm(amplitude) * slope / radius >= 1:
        raise ValueError("deformation amplitude too large: map would fold")
    beta = smooth_bump(center, radius)
    comps = tuple(xk + sp.Float(a) * beta for xk, a in zip(coords(n), amplitude))
    return Diffeomorphism(comps, tuple(map(tuple, domain)), tuple(map(tuple, frozen)), "bump")


def pullback(psi: Diffeomorphism, g: MetricField, V: PotentialField) -> tuple[MetricField, PotentialField]:
    """(Psi^* g)_ij = d_i Psi^k g_kl(Psi) d_j Psi^l and V o Psi, symbolically."""
    if psi.dim != g.dim or V.dim != g.dim:
        raise ValueError("dimension mismatch in pullback")
    xs = coords(g.dim)
    sub = dict(zip(xs, psi.components))
    J = psi.jacobian_expr
    g_psi = sp.Matrix(g.matrix).subs(sub, simultaneous=True)
    pulled = J.T * g_psi * J
    pulled = sp.Matrix(g.dim, g.dim, lambda i, j: pulled[i, j] if i <= j else pulled[j, i])
    # ellipticity class: lambda' = lambda * min(sigma_min^2, sigma_max^-2) over a dense sample
    sample = build_grid(psi.domain, 65 if g.dim == 1 else 33).points
    sv = np.linalg.svd(psi.jacobian(sample), compute_uv=False)
    if np.min(sv) <= 0:
        raise ValueError("singular Jacobian in pullback")
    factor = min(1.0, float(np.min(sv) ** 2), float(np.max(sv) ** -2))
    if tuple(psi.components) == xs:
        return g, V
    return (
        MetricField(sp.ImmutableMatrix(pulled), g.ellipticity * factor, f"pullback({g.name})"),
        PotentialField(V.expr.subs(sub, simultaneous=True), V.dim, f"pullback({V.name})"),
    )


def metric_norm(g: MetricField, x, xi) -> float:
    """|xi|_g = sqrt(g^{ij}(x) xi_i xi_j)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if not np.any(xi):
        raise ValueError("covector must be nonzero")
    ginv = g.inverse(_as_points(x, g.dim))[0]
    return float(np.sqrt(xi @ ginv @ xi))


def metric_norm_field(g: MetricField, points: np.ndarray, xi) -> np.ndarray:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if not np.any(xi):
        raise ValueError("covector must be nonzero")
    ginv = g.inverse(points)
    return np.sqrt(np.einsum("i,mij,j->m", xi, ginv, xi))
