"""Half-cylinder extension at s = 1/2 and the measurement maps built on it.

The harmonic-type extension of Dirichlet data f is u(., y) = e^{-y P^{1/2}} f.
Its Dirichlet-to-Neumann operator is T = P^{1/2}, and the partial
Neumann-to-Dirichlet map on a window is P^{-1/2} restricted to the window.
A finite-difference solve on a truncated cylinder serves as an independent
oracle for the spectral maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .calculus import _check_vanishing, frac_power_apply
from .geometry import Grid, MetricField, PotentialField, Region
from .operators import DiscreteOperator, SpectralDecomposition, assemble
from .resolvent import InverseRootSolver


def extend_spectral(spec: SpectralDecomposition, f: np.ndarray, y) -> np.ndarray:
    """u(., y) = sum_k e^{-y sqrt(lambda_k)} f_k phi_k; y scalar or 1D array."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y_arr < 0):
        raise ValueError("height must be nonnegative")
    f = _check_vanishing(spec, f)
    c = spec.coefficients(f)
    decay = np.exp(-np.outer(y_arr, np.sqrt(spec.eigenvalues)))
    out = spec.synthesize(decay * c)
    return out[0] if np.ndim(y) == 0 else out


def dn_operator(spec: SpectralDecomposition, f: np.ndarray) -> np.ndarray:
    """T f = -d_y u|_{y=0} = P^{1/2} f."""
    return frac_power_apply(spec, 0.5, f)


def _check_support(region: Region, f: np.ndarray, tol: float = 1e-14) -> None:
    if not region.contains_support(np.abs(np.asarray(f)), tol):
        raise ValueError("Neumann data must be supported in the window")


class NDMap:
    """Partial Neumann-to-Dirichlet map on a window, f -> P^{-1/2} f restricted to it.

    ``spec`` is a spectral decomposition or an ``InverseRootSolver``; the
    latter avoids the eigendecomposition on large non-separable grids.
    Complex data and batches of shape (..., nodes) are handled by linearity.
    The output is a full-grid array that vanishes outside the window.
    """

    def __init__(self, spec: SpectralDecomposition | InverseRootSolver, region: Region):
        if region.grid is not spec.grid and region.grid.key() != spec.grid.key():
            raise ValueError("window and decomposition live on different grids")
        self.spec = spec
        self.region = region

    @property
    def metric(self) -> MetricField:
        return self.spec.op.metric

    @property
    def potential(self) -> PotentialField:
        return self.spec.op.potential

    @property
    def grid(self) -> Grid:
        return self.spec.grid

    def __call__(self, f: np.ndarray) -> np.ndarray:
        _check_support(self.region, f)
        if isinstance(self.spec, InverseRootSolver):
            out = self.spec.apply(f)
        else:
            out = frac_power_apply(self.spec, -0.5, f)
        return np.where(self.region.mask, out, 0)


def nd_map(spec: SpectralDecomposition, f: np.ndarray, region: Region) -> np.ndarray:
    """Lambda^Gamma f = (P^{-1/2} f)|_Gamma for f supported in Gamma."""
    return NDMap(spec, region)(f)


def source_to_solution_nonlocal(spec: SpectralDecomposition, f: np.ndarray, region: Region) -> np.ndarray:
    """S^Gamma f = v|_Gamma where P^{1/2} v = f; the same operation as the ND map."""
    _check_support(region, f)
    v = frac_power_apply(spec, -0.5, f)
    return np.where(region.mask, v, 0)


def weighted_pairing(spec: SpectralDecomposition, F: np.ndarray, G: np.ndarray) -> float:
    """sum over nodes of F G |g|^{1/2} dx (the M-inner product)."""
    return spec.inner(F, G)


# --------------------------------------------------------------------------
# truncated-cylinder finite-difference oracle


@dataclass(frozen=True)
class CylinderSolution:
    values: np.ndarray  # shape (y_nodes, grid nodes); last row is the cap y = Y
    heights: np.ndarray
    Y: float
    dy: float
    residual: float

    def trace(self) -> np.ndarray:
        return self.values[0]


def solve_cylinder_direct(grid: Grid, g: MetricField, V: PotentialField, f: np.ndarray, Y: float, y_nodes: int,
                          spec: SpectralDecomposition | None = None, op: DiscreteOperator | None = None,
                          decay_tol: float = 1e-6) -> CylinderSolution:
    """Solve (-Delta_g - d_y^2 + V) u = 0 on Omega x (0, Y), -d_y u = f at y = 0, u = 0 at y = Y.

    The Neumann row uses the ghost node u_{-1} = u_1 + 2 dy f and is halved so
    that the assembled system stays symmetric.  When ``spec`` is given the cap
    height is checked against e^{-sqrt(lambda_1) Y} < decay_tol.
    """
    if y_nodes < 3 or Y <= 0:
        raise ValueError("need Y > 0 and at least 3 height nodes")
    if spec is not None and np.exp(-np.sqrt(spec.gap) * Y) >= decay_tol:
        raise ValueError(f"cap height {Y} too small: e^(-sqrt(lambda_1) Y) >= {decay_tol}")
    op = op or (spec.op if spec is not None else assemble(grid, g, V))
    f = np.asarray(f, dtype=float)
    if np.max(np.abs(f[op.inactive]), initial=0.0) > 1e-12 * np.max(np.abs(f), initial=0.0):
        raise ValueError("Neumann data must vanish on the Dirichlet nodes")
    dy = Y / (y_nodes - 1)
    J = y_nodes - 1  # unknown levels 0..J-1, cap at level J
    m = op.size
    A = op.A.tocsr()
    Mx = sps.diags(op.mass)
    first = np.ones(J)
    first[0] = 0.5
    Ty = sps.diags([np.r_[0.5, np.ones(J - 1)] * 2.0, -np.ones(J - 1), -np.ones(J - 1)], [0, 1, -1]) / dy ** 2
    system = sps.kron(sps.diags(first), A) + sps.kron(Ty, Mx)
    rhs = np.zeros(J * m)
    fa = op.to_active(f)
    rhs[:m] = op.mass * fa / dy
    system = system.tocsc()
    sol = spla.spsolve(system, rhs)
    residual = float(np.linalg.norm(system @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    levels = np.zeros((y_nodes, grid.num_nodes))
    levels[:J, op.active] = sol.reshape(J, m)
    return CylinderSolution(levels, np.linspace(0.0, Y, y_nodes), float(Y), dy, residual)
