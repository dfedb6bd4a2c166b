"""Named metric and potential fields used by experiment configs."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import sympy as sp

from .geometry import MetricField, PotentialField, coords, smooth_bump

METRIC_PRESETS = ("identity", "diagonal-poly", "offdiag-bump")
POTENTIAL_PRESETS = ("zero-potential", "gaussian-potential")


def identity_metric(dim: int) -> MetricField:
    return MetricField(sp.ImmutableMatrix(sp.eye(dim)), 1.0, "identity")


def diagonal_poly(dim: int, base: Sequence[float] | float = 1.0, quad: Sequence[float] | float = 0.25,
                  origin: Sequence[float] | float = 0.0, extents=None) -> MetricField:
    """g = diag(base_i + quad_i * (x_i - origin_i)^2).

    With ``quad = 0`` this is a constant diagonal metric.  ``extents`` bounds
    the box on which the ellipticity constant is computed (defaults to [-4, 4]).
    """
    xs = coords(dim)
    base = np.broadcast_to(np.asarray(base, dtype=float), (dim,))
    quad = np.broadcast_to(np.asarray(quad, dtype=float), (dim,))
    origin = np.broadcast_to(np.asarray(origin, dtype=float), (dim,))
    if np.any(base <= 0) or np.any(quad < 0):
        raise ValueError("diagonal-poly needs base > 0 and quad >= 0")
    extents = extents or [(-4.0, 4.0)] * dim
    diag = [sp.Float(b) + sp.Float(q) * (x - sp.Float(o)) ** 2 for x, b, q, o in zip(xs, base, quad, origin)]
    lo = min(float(b) for b in base)
    hi = max(float(b + q * max((a - o) ** 2, (c - o) ** 2)) for b, q, o, (a, c) in zip(base, quad, origin, extents))
    lam = min(1.0, lo, 1.0 / hi)
    return MetricField(sp.ImmutableMatrix(sp.diag(*diag)), lam, "diagonal-poly")


def offdiag_bump(amplitude: float = 0.3, center: Sequence[float] = (0.5, 0.5), radius: float = 0.4,
                 scale: Sequence[float] = (1.0, 1.0)) -> MetricField:
    """2D metric diag(scale) + amplitude * bump(x) * [[0, 1], [1, 0]] * sqrt(scale_0 scale_1)."""
    s0, s1 = (float(v) for v in scale)
    if s0 <= 0 or s1 <= 0:
        raise ValueError("scale entries must be positive")
    if not abs(amplitude) < 1:
        raise ValueError("|amplitude| must be < 1 for positive definiteness")
    beta = smooth_bump(center, radius)
    off = sp.Float(amplitude * np.sqrt(s0 * s1)) * beta
    g = sp.ImmutableMatrix([[sp.Float(s0), off], [off, sp.Float(s1)]])
    # eigenvalues of diag(s) + a*b*sqrt(s0 s1) J lie in min(s)(1-|a|) .. max(s)(1+|a|)
    lam = min(1.0, min(s0, s1) * (1 - abs(amplitude)), 1.0 / (max(s0, s1) * (1 + abs(amplitude))))
    return MetricField(g, lam, "offdiag-bump")


def zero_potential(dim: int) -> PotentialField:
    return PotentialField(sp.Integer(0), dim, "zero-potential")


def gaussian_potential(dim: int, amplitude: float = 1.0, center: Sequence[float] | float = 0.0,
                       width: float = 1.0, base: float = 0.0) -> PotentialField:
    """V = base + amplitude * exp(-|x - center|^2 / (2 width^2))."""
    if amplitude < 0 or base < 0:
        raise ValueError("gaussian-potential needs nonnegative amplitude and base")
    xs = coords(dim)
    center = np.broadcast_to(np.asarray(center, dtype=float), (dim,))
    r2 = sum((x - sp.Float(c)) ** 2 for x, c in zip(xs, center))
    expr = sp.Float(base) + sp.Float(amplitude) * sp.exp(-r2 / sp.Float(2 * width ** 2))
    return PotentialField(expr, dim, "gaussian-potential")


def constant_potential(dim: int, value: float) -> PotentialField:
    return gaussian_potential(dim, amplitude=0.0, base=value)


def make_metric(name: str, dim: int, **params) -> MetricField:
    if name == "identity":
        return identity_metric(dim)
    if name == "diagonal-poly":
        return diagonal_poly(dim, **params)
    if name == "offdiag-bump":
        if dim != 2:
            raise ValueError("offdiag-bump is a 2D preset")
        return offdiag_bump(**params)
    raise KeyError(f"unknown metric preset {name!r}")


def make_potential(name: str, dim: int, **params) -> PotentialField:
    if name == "zero-potential":
        return zero_potential(dim)
    if name == "gaussian-potential":
        return gaussian_potential(dim, **params)
    raise KeyError(f"unknown potential preset {name!r}")
