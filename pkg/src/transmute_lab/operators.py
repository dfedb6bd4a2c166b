"""Discrete Dirichlet realization of P = -Delta_g + V on L^2(dV_g).

The stiffness matrix discretizes the flux form -d_i(a^{ij} d_j u) + c u with
a^{ij} = |g|^{1/2} g^{ij} and c = |g|^{1/2} V, multiplied by the cell volume,
so that u^T A v is a quadrature of the energy form.  The mass matrix is
diag(|g|^{1/2} * cell volume).  The generalized problem A phi = lambda M phi
then approximates P phi = lambda phi.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import sympy as sp

from .geometry import Grid, MetricField, PotentialField, coords


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Stiffness/mass pair restricted to the active (unknown) nodes.

    ``coupling`` maps values on the Dirichlet nodes adjacent to the active set
    into the active rows; it is needed only for inhomogeneous boundary data.
    """

    grid: Grid
    metric: MetricField
    potential: PotentialField
    A: sps.csr_matrix
    mass: np.ndarray
    active: np.ndarray
    coupling: sps.csr_matrix

    @property
    def size(self) -> int:
        return self.active.size

    def to_active(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[..., self.active]

    def to_grid(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        out = np.zeros(v.shape[:-1] + (self.grid.num_nodes,), dtype=v.dtype)
        out[..., self.active] = v
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Discrete P u = M^{-1} A u for a grid function vanishing off the active set."""
        return self.to_grid(self.A @ self.to_active(u) / self.mass)

    @cached_property
    def inactive(self) -> np.ndarray:
        mask = np.ones(self.grid.num_nodes, dtype=bool)
        mask[self.active] = False
        return np.flatnonzero(mask)


def _node_coefficients(grid: Grid, g: MetricField, V: PotentialField):
    pts = grid.points
    sq = g.sqrt_det(pts)
    a = g.inverse(pts) * sq[:, None, None]
    c = sq * V(pts)
    return a, c, sq


def _full_stiffness(grid: Grid, a: np.ndarray, c: np.ndarray) -> sps.csr_matrix:
    """Flux-form stiffness on all rows whose stencil fits in the grid (interior rows)."""
    shape = grid.shape
    n = grid.dim
    h = grid.spacing
    vol = grid.cell_volume
    idx = np.arange(grid.num_nodes).reshape(shape)
    rows, cols, vals = [], [], []

    def add(r, cc, v):
        rows.append(r.ravel())
        cols.append(cc.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    core = tuple(slice(1, m - 1) for m in shape)
    r_core = idx[core]
    diag = np.zeros(r_core.shape)
    for ax in range(n):
        aii = a[:, ax, ax].reshape(shape)
        lo = list(core)
        hi = list(core)
        lo[ax] = slice(0, shape[ax] - 2)
        hi[ax] = slice(2, shape[ax])
        a_minus = 0.5 * (aii[core] + aii[tuple(lo)])
        a_plus = 0.5 * (aii[core] + aii[tuple(hi)])
        w = vol / h[ax] ** 2
        add(r_core, idx[tuple(lo)], -w * a_minus)
        add(r_core, idx[tuple(hi)], -w * a_plus)
        diag += w * (a_minus + a_plus)
    add(r_core, r_core, diag + vol * c.reshape(shape)[core])

    if n == 2:
        # -d_x(a12 d_y u) - d_y(a21 d_x u) with the symmetric 4-point cross stencil
        a12 = a[:, 0, 1].reshape(shape)
        w = vol / (4 * h[0] * h[1])
        nx, ny = shape

        def sl(di, dj):
            return (slice(1 + di, nx - 1 + di), slice(1 + dj, ny - 1 + dj))

        for di in (-1, 1):
            for dj in (-1, 1):
                # d_x part: a12 at (i+di, j), sign di*dj ; d_y part: a12 at (i, j+dj)
                coef = -w * di * dj * (a12[sl(di, 0)] + a12[sl(0, dj)])
                add(r_core, idx[sl(di, dj)], coef)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    K = sps.coo_matrix((vals, (rows, cols)), shape=(grid.num_nodes, grid.num_nodes)).tocsr()
    K.sum_duplicates()
    return K


def assemble(grid: Grid, g: MetricField, V: PotentialField,
             exclude: np.ndarray | None = None) -> DiscreteOperator:
    """Assemble the Dirichlet operator on the interior nodes.

    ``exclude`` removes further nodes from the unknowns (they become Dirichlet
    nodes), which realizes the operator on a masked domain such as the
    exterior of a closed window.
    """
    if grid.dim != g.dim or V.dim != g.dim:
        raise ValueError("grid and field dimensions differ")
    a, c, sq = _node_coefficients(grid, g, V)
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(c)):
        raise ValueError("non-finite field values on the grid")
    if np.any(sq <= 0):
        raise ValueError("metric determinant is not positive")
    # ellipticity of the node and face coefficient matrices
    eig_min = np.linalg.eigvalsh(a).min(axis=1)
    if np.any(eig_min <= 0):
        raise ValueError("flux coefficient matrix is not positive definite at some node")
    shape = grid.shape
    for ax in range(grid.dim):
        aii = a[:, ax, ax].reshape(shape)
        face = 0.5 * (np.take(aii, range(shape[ax] - 1), axis=ax) + np.take(aii, range(1, shape[ax]), axis=ax))
        if np.any(face <= 0):
            raise ValueError("face-averaged coefficient is not positive")

    K = _full_stiffness(grid, a, c)
    active_mask = ~grid.boundary_mask.copy()
    if exclude is not None:
        active_mask[np.asarray(exclude, dtype=int)] = False
    active = np.flatnonzero(active_mask)
    A = K[active][:, active]
    A = ((A + A.T) * 0.5).tocsr()
    others = np.flatnonzero(~active_mask)
    coupling = K[active][:, others].tocsr()
    coupling_full = sps.csr_matrix((coupling.data, others[coupling.indices], coupling.indptr),
                                   shape=(active.size, grid.num_nodes))
    mass = sq[active] * grid.cell_volume
    return DiscreteOperator(grid, g, V, A, mass, active, coupling_full)


# --------------------------------------------------------------------------
# spectral decompositions


class SpectralDecomposition:
    """M-orthonormal eigenpairs of a DiscreteOperator.

    Grid functions are full-grid arrays (last axis = node); values off the
    active set are ignored on input and zero on output.
    """

    def __init__(self, op: DiscreteOperator, eigenvalues: np.ndarray):
        self.op = op
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)

    @property
    def grid(self) -> Grid:
        return self.op.grid

    @property
    def mass(self) -> np.ndarray:
        return self.op.mass

    @property
    def K(self) -> int:
        return self.eigenvalues.size

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[0])

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def modes(self) -> np.ndarray:
        """Eigenvectors on the active nodes, one per column."""
        raise NotImplementedError

    def mode(self, k: int) -> np.ndarray:
        """k-th eigenfunction (0-based) as a full-grid array."""
        c = np.zeros(self.K)
        c[k] = 1.0
        return self.synthesize(c)

    def apply_function(self, fn, u: np.ndarray) -> np.ndarray:
        """sum_k fn(lambda_k) u_k phi_k, real or complex u."""
        u = np.asarray(u)
        if np.iscomplexobj(u):
            return self.apply_function(fn, u.real) + 1j * self.apply_function(fn, u.imag)
        return self.synthesize(fn(self.eigenvalues) * self.coefficients(u))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Weighted inner product <u, v>_M over the active nodes."""
        return float(np.sum(self.op.to_active(u) * self.mass * self.op.to_active(v)))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))


class DenseDecomposition(SpectralDecomposition):
    def __init__(self, op: DiscreteOperator, eigenvalues: np.ndarray, vectors: np.ndarray):
        super().__init__(op, eigenvalues)
        self._vectors = vectors

    @property
    def modes(self) -> np.ndarray:
        return self._vectors

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        ua = self.op.to_active(u)
        return (ua * self.mass) @ self._vectors

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        return self.op.to_grid(np.asarray(c) @ self._vectors.T)


class KroneckerDecomposition(SpectralDecomposition):
    """Tensor-product eigenbasis for separable 2D operators.

    The 2D eigenvectors are outer products of per-axis eigenvectors, so
    coefficients are computed with two small matrix products instead of a
    dense solve of the full interior system.
    """

    def __init__(self, op: DiscreteOperator, axis_values, axis_vectors, axis_masses):
        mx, my = (v.shape[0] for v in axis_vectors)
        lam = np.add.outer(axis_values[0], axis_values[1]).ravel()
        self._order = np.argsort(lam, kind="stable")
        super().__init__(op, lam[self._order])
        self._vx, self._vy = axis_vectors
        self._shape = (mx, my)
        self._mass = np.outer(*axis_masses)

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        ua = self.op.to_active(u)
        U = ua.reshape(ua.shape[:-1] + self._shape)
        C = np.einsum("ia,...ij,jb->...ab", self._vx, U * self._mass, self._vy, optimize=True)
        return C.reshape(C.shape[:-2] + (-1,))[..., self._order]

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c)
        full = np.zeros(c.shape[:-1] + (self.K,), dtype=c.dtype)
        full[..., self._order] = c
        C = full.reshape(c.shape[:-1] + self._shape)
        U = np.einsum("ia,...ab,jb->...ij", self._vx, C, self._vy, optimize=True)
        return self.op.to_grid(U.reshape(U.shape[:-2] + (-1,)))

    @cached_property
    def modes(self) -> np.ndarray:
        return np.kron(self._vx, self._vy)[:, self._order]


def _axis_factors(op: DiscreteOperator):
    """Per-axis 1D fields (g_ii(x_i), V_i(x_i)) when the 2D operator separates, else None.

    Separation needs a diagonal metric whose i-th entry depends on x_i only and
    an additive potential.  The discrete flux coefficients and mass then
    factor exactly, so M^{-1} A = P_0 (x) I + I (x) P_1.
    """
    g, V, grid = op.metric, op.potential, op.grid
    if grid.dim != 2 or not g.is_diagonal or op.active.size != np.prod([m - 2 for m in grid.shape]):
        return None
    x = coords(2)
    for i in range(2):
        if g.matrix[i, i].free_symbols - {x[i]}:
            return None
    if sp.simplify(sp.diff(V.expr, x[0], x[1])) != 0:
        return None
    lo = [sp.Float(v) for v in grid.lower]
    x0 = coords(1)[0]
    parts_V = [V.expr.subs(x[1], lo[1]), V.expr.subs(x[0], lo[0]) - V.expr.subs({x[0]: lo[0], x[1]: lo[1]})]
    out = []
    for i in range(2):
        gi = MetricField(sp.Matrix([[g.matrix[i, i].subs(x[i], x0)]]), g.ellipticity, f"{g.name}-axis{i}")
        Vi = PotentialField(sp.sympify(parts_V[i]).subs(x[i], x0), 1, f"{V.name}-axis{i}")
        out.append((gi, Vi))
    return out


def _is_separable(op: DiscreteOperator) -> bool:
    return _axis_factors(op) is not None


def _dense_eigh(A: np.ndarray, mass: np.ndarray, tridiagonal: bool):
    s = 1.0 / np.sqrt(mass)
    if tridiagonal:
        d = np.diag(A) * s * s
        e = np.diag(A, 1) * s[:-1] * s[1:]
        lam, U = sla.eigh_tridiagonal(d, e)
    else:
        B = A * s[:, None] * s[None, :]
        lam, U = sla.eigh(B, overwrite_a=True, check_finite=False)
    return lam, U * s[:, None]


def eigendecompose(op: DiscreteOperator, K: int | None = None, method: str = "auto") -> SpectralDecomposition:
    """Eigenpairs of A phi = lambda M phi via the similarity M^{-1/2} A M^{-1/2}.

    ``method`` is "dense", "kronecker" or "auto" (tensor-product basis when the
    operator separates, dense otherwise).  All modes are kept unless ``K`` is
    given.
    """
    n_act = op.size
    K = n_act if K is None else int(K)
    if K < 1 or K > n_act:
        raise ValueError(f"K={K} must lie in [1, {n_act}]")
    if method == "auto":
        method = "kronecker" if _is_separable(op) else "dense"
    if method == "kronecker":
        if not _is_separable(op):
            raise ValueError("operator does not separate")
        if K != n_act:
            raise ValueError("the tensor-product basis keeps all modes")
        return _kronecker(op)
    if method != "dense":
        raise ValueError(f"unknown method {method!r}")
    A = op.A.toarray()
    tri = op.grid.dim == 1 and op.active.size == op.grid.num_nodes - 2
    try:
        lam, V = _dense_eigh(A, op.mass, tri)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise RuntimeError(f"eigensolver did not converge: {exc}") from exc
    if lam[0] <= 0:
        raise ValueError(f"lowest eigenvalue {lam[0]:.3g} is not positive")
    return DenseDecomposition(op, lam[:K], V[:, :K])


def _kronecker(op: DiscreteOperator) -> KroneckerDecomposition:
    grid = op.grid
    vals, vecs, masses = [], [], []
    for ax, (gi, Vi) in enumerate(_axis_factors(op)):
        line = Grid((grid.lower[ax],), (grid.upper[ax],), (grid.shape[ax],))
        sub = assemble(line, gi, Vi)
        lam, U = _dense_eigh(sub.A.toarray(), sub.mass, True)
        vals.append(lam)
        vecs.append(U)
        masses.append(sub.mass)
    if not np.allclose(np.outer(*masses).ravel(), op.mass, rtol=1e-12, atol=0):
        raise RuntimeError("mass matrix does not factor over the axes")
    return KroneckerDecomposition(op, vals, vecs, masses)


def check_decomposition(spec: SpectralDecomposition, samples: int = 8) -> dict:
    """M-orthonormality and eigen-residuals on a sample of modes."""
    op = spec.op
    K = spec.K
    pick = np.unique(np.linspace(0, K - 1, min(samples, K)).astype(int))
    Phi = np.stack([op.to_active(spec.mode(k)) for k in pick], axis=1)
    gram = Phi.T @ (Phi * op.mass[:, None])
    ortho = float(np.max(np.abs(gram - np.eye(pick.size))))
    res = 0.0
    for col, k in enumerate(pick):
        phi = Phi[:, col]
        r = op.A @ phi - spec.eigenvalues[k] * op.mass * phi
        res = max(res, float(np.linalg.norm(r) / (spec.eigenvalues[k] * np.linalg.norm(op.mass * phi))))
    return {"orthonormality": ortho, "relative_residual": res, "lambda_1": spec.gap}
