"""Per-cell context shared by the macro spaces and the virtual element operators."""
from __future__ import annotations

import numpy as np

from .mesh.geometry import element_geometry
from .mesh.subtri import subtriangulate
from .poly import PolyBasis, ScaledMonomials, orthonormal_basis, triangle_points


class Cell:
    """Geometry, sub-triangulation, quadrature and an orthonormal P_degree basis.

    The orthonormal basis satisfies (p_a, p_b)_K = |K| delta_ab with p_0 = 1,
    is hierarchical in the degree, and is built from monomials scaled by the
    half-widths of the bounding box so that thin cells stay well conditioned.
    """

    def __init__(self, poly, degree: int, exactness: int, strategy: str = "inball-fan"):
        self.poly = np.asarray(poly, dtype=float)
        self.geometry = element_geometry(self.poly)
        self.subtri = subtriangulate(self.poly, strategy, center=(
            self.geometry.inball_center if strategy == "inball-fan" else None))
        self.degree = int(degree)
        self.exactness = int(max(exactness, 2 * degree))
        self.qpoints, self.qweights = triangle_points(self.subtri.coords, self.exactness)
        self.area = self.geometry.area
        self.center = self.geometry.inball_center
        self.h = self.geometry.diameter
        lo, hi = self.poly.min(axis=0), self.poly.max(axis=0)
        self.box_scale = 0.5 * (hi - lo)
        self.basis: PolyBasis = orthonormal_basis(
            self.qpoints.reshape(-1, 2), self.qweights.ravel(), self.degree,
            self.center, self.box_scale, self.area)
        self.monomials = ScaledMonomials(self.center, self.h, self.degree)

    @property
    def n_vertices(self) -> int:
        return len(self.poly)

    def edge(self, i: int):
        return self.poly[i], self.poly[(i + 1) % len(self.poly)]

    def monomial_to_basis(self, degree: int) -> np.ndarray:
        """U with m_alpha-expansion of p_a: p_a = sum_alpha U[alpha, a] m_alpha,
        restricted to degree ``degree``."""
        n = (degree + 1) * (degree + 2) // 2
        e = self.basis.monomials.exponents[:n]
        s = (self.h / self.box_scale[0]) ** e[:, 0] * (self.h / self.box_scale[1]) ** e[:, 1]
        return s[:, None] * self.basis.T[:n, :n]

    def integrate(self, values) -> np.ndarray:
        """Integral over the cell of values given at (nt, nq, ...) quadrature points."""
        v = np.asarray(values)
        return np.tensordot(self.qweights.ravel(), v.reshape((-1,) + v.shape[2:]), axes=(0, 0))
