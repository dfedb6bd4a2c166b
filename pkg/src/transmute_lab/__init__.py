"""Numerical laboratory for P = -Delta_g + V on boxes in one and two dimensions.

Modules: geometry (grids, fields, windows, diffeomorphisms), operators
(discrete Dirichlet operator and eigendecompositions), calculus (functional
calculus, semigroup integrals, wave propagators), extension (half-cylinder
extension and Neumann-to-Dirichlet maps), wkb (approximate solutions for
oscillatory data), boundary (metric and potential recovery from pairings),
transmute (wave/heat transmutation, wave measurement maps, leapfrog) and cli.
"""

__version__ = "0.1.0"
