"""Polynomial kernel: quadrature, scaled monomials, orthonormal cell bases,
edge Legendre bases and L2 projections.

All cell integrals are evaluated by looping over the sub-triangles of the
cell; no direct polygon quadrature is attempted.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi

MAX_EXACTNESS = 30


def dim_p(k: int) -> int:
    """Dimension of the scalar polynomial space of total degree <= k in 2D."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> tuple[tuple[int, int], ...]:
    """Exponents (a, b) ordered by total degree, then by decreasing a."""
    out = []
    for n in range(degree + 1):
        for b in range(n + 1):
            out.append((n - b, b))
    return tuple(out)


def monomial_index(a: int, b: int) -> int:
    n = a + b
    return dim_p(n - 1) + b


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    domain: str
    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quadrature_rule(domain: str, exactness: int) -> QuadratureRule:
    """Gauss rule on the reference segment [0, 1] or the reference triangle.

    The triangle rule is the collapsed (conical) product of a Gauss-Jacobi
    rule and a Gauss-Legendre rule: positive weights, interior points, any
    degree.
    """
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise ValueError(f"quadrature exactness {exactness} outside [0, {MAX_EXACTNESS}]")
    n = exactness // 2 + 1
    if domain == "segment":
        x, w = legendre.leggauss(n)
        pts = 0.5 * (x + 1.0)
        return QuadratureRule("segment", pts.reshape(-1, 1), 0.5 * w, exactness)
    if domain == "triangle":
        t, wt = roots_jacobi(n, 1.0, 0.0)
        u = 0.5 * (t + 1.0)
        wu = 0.25 * wt
        x, wx = legendre.leggauss(n)
        v = 0.5 * (x + 1.0)
        wv = 0.5 * wx
        U, V = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu, wv)
        pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
        return QuadratureRule("triangle", pts, W.ravel(), exactness)
    raise ValueError(f"unknown quadrature domain {domain!r}")


def triangle_points(tri: np.ndarray, exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points and weights on triangles of shape (nt, 3, 2).

    Returns arrays of shape (nt, nq, 2) and (nt, nq).
    """
    tri = np.asarray(tri, dtype=float)
    if tri.ndim == 2:
        tri = tri[None]
    rule = quadrature_rule("triangle", exactness)
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = (v0[:, None, :] + rule.points[None, :, 0:1] * e1[:, None, :]
           + rule.points[None, :, 1:2] * e2[:, None, :])
    w = np.abs(det)[:, None] * rule.weights[None, :]
    return pts, w


def segment_points(a: np.ndarray, b: np.ndarray, exactness: int):
    """Quadrature on the segment a->b: points (nq, 2), parameters (nq,), weights (nq,)."""
    rule = quadrature_rule("segment", exactness)
    s = rule.points[:, 0]
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    return pts, s, rule.weights * np.linalg.norm(b - a)


# ---------------------------------------------------------------------------
# monomials
# ---------------------------------------------------------------------------

class ScaledMonomials:
    """Monomials ((x - cx)/sx)^a ((y - cy)/sy)^b with a + b <= degree.

    With sx == sy == h_K this is the usual scaled monomial basis of a cell;
    per-axis scales are used internally for thin cells.
    """

    def __init__(self, center, scale, degree: int):
        self.center = np.asarray(center, dtype=float)
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (2,))
        self.scale = scale.copy()
        self.degree = int(degree)
        self.exponents = np.array(monomial_exponents(self.degree), dtype=int).reshape(-1, 2)
        self.size = dim_p(self.degree)

    def _powers(self, pts):
        z = (np.asarray(pts, float).reshape(-1, 2) - self.center) / self.scale
        d = self.degree
        px = np.ones((z.shape[0], d + 1))
        py = np.ones((z.shape[0], d + 1))
        for i in range(1, d + 1):
            px[:, i] = px[:, i - 1] * z[:, 0]
            py[:, i] = py[:, i - 1] * z[:, 1]
        return px, py

    def values(self, pts) -> np.ndarray:
        px, py = self._powers(pts)
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        return px[:, a] * py[:, b]

    def gradients(self, pts) -> np.ndarray:
        """Array of shape (npts, size, 2)."""
        px, py = self._powers(pts)
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        gx = np.where(a > 0, a, 0) * px[:, np.maximum(a - 1, 0)] * py[:, b] / self.scale[0]
        gy = np.where(b > 0, b, 0) * px[:, a] * py[:, np.maximum(b - 1, 0)] / self.scale[1]
        return np.stack([gx, gy], axis=-1)

    @property
    def diff_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient maps of d/dx and d/dy within the same basis."""
        n = self.size
        dx = np.zeros((n, n))
        dy = np.zeros((n, n))
        for j, (a, b) in enumerate(self.exponents):
            if a > 0:
                dx[monomial_index(a - 1, b), j] = a / self.scale[0]
            if b > 0:
                dy[monomial_index(a, b - 1), j] = b / self.scale[1]
        return dx, dy


# ---------------------------------------------------------------------------
# orthonormal bases
# ---------------------------------------------------------------------------

def orthonormalize(vander_w: np.ndarray) -> np.ndarray:
    """Upper-triangular R with vander_w @ inv(R) orthonormal (QR applied twice)."""
    q1, r1 = np.linalg.qr(vander_w)
    q2, r2 = np.linalg.qr(q1)
    r = r2 @ r1
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    return sign[:, None] * r


class PolyBasis:
    """Polynomial basis p = m @ T expressed over a ScaledMonomials family m.

    ``T`` is (size x size). Hierarchical when T is upper triangular.
    """

    def __init__(self, monomials: ScaledMonomials, transform: np.ndarray):
        self.monomials = monomials
        self.T = np.asarray(transform, dtype=float)
        self.degree = monomials.degree
        self.size = monomials.size
        self._Tinv = None

    @property
    def Tinv(self):
        if self._Tinv is None:
            self._Tinv = np.linalg.inv(self.T)
        return self._Tinv

    def values(self, pts):
        return self.monomials.values(pts) @ self.T

    def gradients(self, pts):
        g = self.monomials.gradients(pts)
        return np.einsum("pmc,mn->pnc", g, self.T)

    def laplacian_matrix(self) -> np.ndarray:
        """Coefficient map c -> coefficients of the Laplacian, in this basis."""
        dx, dy = self.monomials.diff_matrices
        return self.Tinv @ (dx @ dx + dy @ dy) @ self.T

    def gradient_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        dx, dy = self.monomials.diff_matrices
        return self.Tinv @ dx @ self.T, self.Tinv @ dy @ self.T


def orthonormal_basis(pts: np.ndarray, w: np.ndarray, degree: int, center, scale,
                      measure: float | None = None) -> PolyBasis:
    """L2-orthonormal hierarchical basis with (p_i, p_j) = measure * delta_ij.

    Gram-Schmidt in graded order, so the first dim_p(j) members span P_j and
    p_0 == 1 when ``measure`` is the domain area.
    """
    mono = ScaledMonomials(center, scale, degree)
    pts = np.asarray(pts).reshape(-1, 2)
    w = np.asarray(w).ravel()
    if measure is None:
        measure = float(w.sum())
    V = mono.values(pts) * np.sqrt(w)[:, None]
    R = orthonormalize(V)
    T = np.linalg.solve(R, np.eye(mono.size)) * np.sqrt(measure)
    return PolyBasis(mono, T)


@lru_cache(maxsize=None)
def reference_triangle_basis(degree: int) -> PolyBasis:
    """Orthonormal basis on the reference triangle, (p_i, p_j) = delta_ij / 2."""
    rule = quadrature_rule("triangle", min(2 * degree + 2, MAX_EXACTNESS))
    return orthonormal_basis(rule.points, rule.weights, degree, (0.0, 0.0), 1.0, 0.5)


# ---------------------------------------------------------------------------
# edge basis
# ---------------------------------------------------------------------------

def legendre_values(s: np.ndarray, degree: int) -> np.ndarray:
    """Legendre P_j(2s - 1), j <= degree, at parameters s in [0, 1]; shape (ns, degree+1)."""
    s = np.asarray(s, dtype=float)
    if degree < 0:
        return np.zeros((s.size, 0))
    return legendre.legvander(2.0 * s - 1.0, degree)


def orthonormal_legendre_values(s: np.ndarray, degree: int) -> np.ndarray:
    """sqrt(2j+1) P_j(2s - 1): orthonormal for the averaged inner product on [0, 1]."""
    return legendre_values(s, degree) * np.sqrt(2.0 * np.arange(max(degree + 1, 0)) + 1.0)


@dataclass(frozen=True)
class EdgeBasis:
    """Legendre polynomials on the segment start->end, parameter s in [0, 1].

    phi_0 == 1 and (phi_i, phi_j)_F = |F| / (2 i + 1) delta_ij.
    """
    start: np.ndarray
    end: np.ndarray
    degree: int

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.asarray(self.end) - np.asarray(self.start)))

    @property
    def midpoint(self):
        return 0.5 * (np.asarray(self.start) + np.asarray(self.end))

    @property
    def size(self) -> int:
        return self.degree + 1

    def parameter(self, pts) -> np.ndarray:
        a = np.asarray(self.start, float)
        d = np.asarray(self.end, float) - a
        return (np.asarray(pts, float).reshape(-1, 2) - a) @ d / (d @ d)

    def values(self, pts) -> np.ndarray:
        return legendre_values(self.parameter(pts), self.degree)

    def norms_squared(self) -> np.ndarray:
        return self.length / (2.0 * np.arange(self.degree + 1) + 1.0)


def edge_moments(f: Callable, start, end, r: int, exactness: int | None = None) -> np.ndarray:
    """Scaled moments (1/|F|) (f, phi_i)_F against the Legendre basis of degree r."""
    if exactness is None:
        exactness = 2 * r + 2
    pts, s, w = segment_points(start, end, exactness)
    fv = np.asarray(f(pts), dtype=float)
    L = legendre_values(s, r)
    length = float(np.linalg.norm(np.asarray(end, float) - np.asarray(start, float)))
    return np.tensordot(L * w[:, None], fv, axes=(0, 0)) / length


# ---------------------------------------------------------------------------
# polynomial coefficients and calculus
# ---------------------------------------------------------------------------

@dataclass
class PolyCoeffs:
    """Coefficients over a ScaledMonomials basis; shape (size,) or (size, 2)."""
    basis: ScaledMonomials
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[0] != self.basis.size:
            raise ValueError("coefficient length does not match basis size")

    @property
    def is_vector(self) -> bool:
        return self.coeffs.ndim == 2

    def __call__(self, pts) -> np.ndarray:
        return self.basis.values(pts) @ self.coeffs

    def gradient(self) -> "PolyCoeffs":
        if self.is_vector:
            raise ValueError("gradient of a vector polynomial is not supported")
        dx, dy = self.basis.diff_matrices
        return PolyCoeffs(self.basis, np.column_stack([dx @ self.coeffs, dy @ self.coeffs]))

    def divergence(self) -> "PolyCoeffs":
        if not self.is_vector:
            raise ValueError("divergence needs a vector polynomial")
        dx, dy = self.basis.diff_matrices
        return PolyCoeffs(self.basis, dx @ self.coeffs[:, 0] + dy @ self.coeffs[:, 1])


def poly_calculus(p: PolyCoeffs) -> dict:
    """Gradient (scalar input) or divergence (vector input) plus an evaluator."""
    out = {"evaluate": p.__call__}
    if p.is_vector:
        out["divergence"] = p.divergence()
    else:
        out["gradient"] = p.gradient()
    return out


def l2_project(f: Callable, tri_pts: np.ndarray, tri_w: np.ndarray, center, h: float,
               k: int) -> PolyCoeffs:
    """L2 projection of ``f`` onto P_k(K), returned over the scaled monomials
    ((x - x_K)/h)^alpha.

    ``tri_pts``/``tri_w`` are the cell quadrature points and weights gathered
    from its sub-triangles. The normal equations are solved through an
    orthonormal basis built on bounding-box scaled monomials, which spans the
    same space and stays well conditioned on thin cells.
    """
    pts = np.asarray(tri_pts, float).reshape(-1, 2)
    w = np.asarray(tri_w, float).ravel()
    area = w.sum()
    if not area > 0:
        raise ValueError("degenerate cell: zero measure")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = np.maximum(0.5 * (hi - lo), 1e-300)
    basis = orthonormal_basis(pts, w, k, center, scale, area)
    fv = np.asarray(f(pts), float)
    mom = (basis.values(pts) * w[:, None]).T @ fv / area
    aniso = basis.T @ mom
    # ((x-c)/sx)^a ((y-c)/sy)^b = (h/sx)^a (h/sy)^b ((x-c)/h)^a ((y-c)/h)^b
    e = basis.monomials.exponents
    factor = (h / scale[0]) ** e[:, 0] * (h / scale[1]) ** e[:, 1]
    coeffs = aniso * (factor if aniso.ndim == 1 else factor[:, None])
    return PolyCoeffs(ScaledMonomials(center, h, k), coeffs)
