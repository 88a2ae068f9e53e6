"""Per-element virtual element operators and local matrices.

Local DoFs follow the cell loop counterclockwise. Edge moments use Legendre
polynomials P_j(2s - 1) in the counterclockwise parameter s of each edge;
the global assembly maps them to the fixed global edge direction.

Cell polynomials are handled in an orthonormal basis p_a with
(p_a, p_b)_K = |K| delta_ab and p_0 = 1 (see ``Cell``); results are
converted to scaled monomials only at the interfaces.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell import Cell
from .macrodiv import MacroDivSpace
from .poly import dim_p, legendre_values, orthonormal_legendre_values, segment_points

FAMILIES = ("NC", "C")
INTERIOR_BASES = ("monomial", "orthonormal")


class LayoutMismatchError(ValueError):
    """Macro space mode and VEM family disagree."""


@dataclass(frozen=True)
class ElementDofLayout:
    """Ordered local DoFs of one polygonal element.

    NC: k edge moments per edge, then dim P_{k-2} interior moments.
    C: one value per vertex, k-1 edge moments per edge, then the interior moments.
    """
    family: str
    k: int
    n_vertices: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown VEM family {self.family!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    @property
    def n_edges(self) -> int:
        return self.n_vertices

    @property
    def edge_block(self) -> int:
        return self.k if self.family == "NC" else self.k - 1

    @property
    def n_interior(self) -> int:
        return dim_p(self.k - 2)

    @property
    def n_vertex_dofs(self) -> int:
        return 0 if self.family == "NC" else self.n_vertices

    @property
    def interior_start(self) -> int:
        return self.n_vertex_dofs + self.n_edges * self.edge_block

    @property
    def n_dofs(self) -> int:
        return self.interior_start + self.n_interior

    @property
    def trace_degree(self) -> int:
        return self.k - 1 if self.family == "NC" else self.k

    def edge_dofs(self, i: int) -> np.ndarray:
        b = self.edge_block
        return self.n_vertex_dofs + i * b + np.arange(b)

    def interior_dofs(self) -> np.ndarray:
        return self.interior_start + np.arange(self.n_interior)

    def trace_map(self, i: int) -> np.ndarray:
        """Matrix (trace_degree+1, n_dofs) giving Legendre coefficients a_j of
        the trace on edge i (for NC: of its L2 projection onto P_{k-1})."""
        k = self.k
        T = np.zeros((self.trace_degree + 1, self.n_dofs))
        ed = self.edge_dofs(i)
        if self.family == "NC":
            for j in range(k):
                T[j, ed[j]] = np.sqrt(2 * j + 1)
            return T
        for j in range(k - 1):
            T[j, ed[j]] = np.sqrt(2 * j + 1)
        # endpoint values fix the two top coefficients
        v0 = np.zeros(self.n_dofs)
        v1 = np.zeros(self.n_dofs)
        v0[i] = 1.0
        v1[(i + 1) % self.n_vertices] = 1.0
        for j in range(k - 1):
            v0 -= (-1) ** j * T[j]
            v1 -= T[j]
        sigma = (-1) ** (k - 1)
        T[k - 1] = 0.5 * (v1 + sigma * v0)
        T[k] = 0.5 * (v1 - sigma * v0)
        return T


@dataclass
class LocalMatrices:
    stiffness: np.ndarray
    mass: np.ndarray
    load: np.ndarray
    method: str
    alpha: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        return self.stiffness + self.alpha * self.mass


@dataclass
class ElementOperators:
    """Projection matrices of one element.

    ``D``: DoFs of each orthonormal polynomial p_a (n_dofs x dim P_k).
    ``PiStar``/``Q``: DoF vector -> p-coefficients of the Ritz projection and
    of the L2 lift. ``B``: DoF vector -> coefficients of the projected
    gradient in the (orthonormal) macro basis, when a macro space is attached.
    """
    cell: Cell
    layout: ElementDofLayout
    interior_basis: str
    D: np.ndarray
    PiStar: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    trace_maps: list
    macro: MacroDivSpace | None = None
    B: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def PiStar_monomial(self) -> np.ndarray:
        """Ritz projection coefficients over the scaled monomials m_alpha."""
        return self.cell.monomial_to_basis(self.layout.k) @ self.PiStar

    @property
    def Q_monomial(self) -> np.ndarray:
        return self.cell.monomial_to_basis(self.layout.k) @ self.Q


def _edge_params(cell: Cell, i: int, exactness: int):
    a, b = cell.edge(i)
    return segment_points(a, b, exactness)


def _interior_conversion(cell: Cell, k: int, interior_basis: str) -> np.ndarray:
    """U with p_a = sum_alpha U[alpha, a] phi_alpha over P_{k-2}, where phi is
    the interior DoF basis."""
    n2 = dim_p(k - 2)
    if n2 == 0:
        return np.zeros((0, 0))
    if interior_basis == "orthonormal":
        return np.eye(n2)
    if interior_basis != "monomial":
        raise ValueError(f"unknown interior basis {interior_basis!r}")
    return cell.monomial_to_basis(k - 2)


def dof_matrix(cell: Cell, layout: ElementDofLayout, interior_basis: str = "monomial") -> np.ndarray:
    """DoFs of the orthonormal cell polynomials p_a, shape (n_dofs, dim P_k)."""
    k = layout.k
    nP = dim_p(k)
    D = np.zeros((layout.n_dofs, nP))
    basis = cell.basis
    if layout.family == "C":
        D[: layout.n_vertices] = basis.values(cell.poly)[:, :nP]
    for i in range(layout.n_edges):
        pts, s, w = _edge_params(cell, i, 2 * k + 2)
        L = orthonormal_legendre_values(s, layout.edge_block - 1)
        length = w.sum()
        D[layout.edge_dofs(i)] = (L * w[:, None]).T @ basis.values(pts)[:, :nP] / length
    n2 = layout.n_interior
    if n2:
        U = _interior_conversion(cell, k, interior_basis)
        D[layout.interior_dofs(), :n2] = np.linalg.inv(U).T
    return D


def ritz_projection_matrix(cell: Cell, layout: ElementDofLayout, interior_basis: str = "monomial"):
    """Ritz projection DoFs -> p-coefficients, with D (DoFs of p_a) and G."""
    k = layout.k
    nP = dim_p(k)
    n2 = layout.n_interior
    basis = cell.basis
    dx, dy = basis.gradient_matrices()
    dx, dy = dx[:nP, :nP], dy[:nP, :nP]
    area = cell.area
    G = area * (dx.T @ dx + dy.T @ dy)
    lap = basis.laplacian_matrix()[:nP, :nP]
    U = _interior_conversion(cell, k, interior_basis)
    E = np.zeros((n2, layout.n_dofs))
    if n2:
        E[:, layout.interior_dofs()] = U.T
    R = np.zeros((nP, layout.n_dofs))
    if n2:
        R -= area * lap[:n2].T @ E
    trace_maps = [layout.trace_map(i) for i in range(layout.n_edges)]
    bmean = np.zeros(nP)
    mean_row = np.zeros(layout.n_dofs)
    t = layout.trace_degree
    normals = cell.geometry.outward_normals
    for i in range(layout.n_edges):
        pts, s, w = _edge_params(cell, i, 2 * k + 2)
        grads = basis.gradients(pts)[:, :nP, :]
        dn = grads @ normals[i]
        L = legendre_values(s, t)
        gm = (L * w[:, None]).T @ dn  # int_F dn p_b P_j
        R += gm.T @ trace_maps[i]
        bmean += w @ basis.values(pts)[:, :nP]
        mean_row += w.sum() * trace_maps[i][0]
    Gt = G.copy()
    Gt[0] = bmean
    R[0] = mean_row
    PiStar = np.linalg.solve(Gt, R)
    D = dof_matrix(cell, layout, interior_basis)
    return PiStar, D, G, E, trace_maps


def l2_lift_matrix(PiStar: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Q v = Pi v + Q_{k-2} v - Q_{k-2} Pi v in the hierarchical orthonormal basis:
    the lowest block comes from the interior moments and the rest from Pi."""
    Q = PiStar.copy()
    n2 = E.shape[0]
    Q[:n2] = E
    return Q


def gradient_projection_matrix(macro: MacroDivSpace, Q: np.ndarray, trace_maps: list) -> np.ndarray:
    """Rows b_i = -(div phi_i, Q_k v)_K + sum_F (phi_i.n, v)_F as DoF functionals."""
    ns = macro.div_moments.shape[1]
    B = -macro.div_moments @ Q[:ns]
    for F, T in enumerate(trace_maps):
        B += macro.traces[F] @ T
    return B


def macro_mode_for(family: str, reduced: bool = False) -> str:
    if family == "NC":
        return "NC"
    return "C-reduced" if reduced else "C"


def element_operators(cell: Cell, layout: ElementDofLayout, macro: MacroDivSpace | None = None,
                      interior_basis: str = "monomial") -> ElementOperators:
    if cell.degree < layout.k:
        raise ValueError("cell basis degree below k")
    PiStar, D, G, E, trace_maps = ritz_projection_matrix(cell, layout, interior_basis)
    Q = l2_lift_matrix(PiStar, E)
    ops = ElementOperators(cell, layout, interior_basis, D, PiStar, Q, G, trace_maps)
    if macro is not None:
        check_macro_mode(layout, macro)
        ops.macro = macro
        ops.B = gradient_projection_matrix(macro, Q, trace_maps)
    return ops


def check_macro_mode(layout: ElementDofLayout, macro: MacroDivSpace):
    ok = (layout.family == "NC" and macro.mode == "NC") or \
         (layout.family == "C" and macro.mode in ("C", "C-reduced"))
    if not ok or macro.k != layout.k:
        raise LayoutMismatchError(
            f"macro space ({macro.mode}, k={macro.k}) does not match {layout.family} k={layout.k}")


def project_virtual_gradient(ops: ElementOperators, dof_values: np.ndarray, family: str | None = None):
    """Macro coefficients of the L2 projection of grad v, from DoFs alone."""
    if ops.macro is None:
        raise ValueError("element operators carry no macro space")
    if family is not None and family != ops.layout.family:
        raise LayoutMismatchError(f"family {family} does not match layout {ops.layout.family}")
    return np.linalg.solve(ops.macro.gram, ops.B @ dof_values)


def load_moments(cell: Cell, f, k: int, offset=None) -> np.ndarray:
    """(f, p_a)_K for the orthonormal p_a of degree k; ``offset`` shifts local
    coordinates to physical ones before evaluating f."""
    pts = cell.qpoints.reshape(-1, 2)
    x = pts if offset is None else pts + offset
    fv = np.asarray(f(x), float)
    P = cell.basis.values(pts)[:, : dim_p(k)]
    return (P * cell.qweights.ravel()[:, None]).T @ fv


def local_matrices_sf(ops: ElementOperators, alpha: float = 0.0, f=None, offset=None) -> LocalMatrices:
    """Stabilization-free matrices: projected-gradient stiffness plus Q-mass."""
    if ops.B is None:
        raise LayoutMismatchError("stabilization-free matrices need a macro space")
    B = ops.B
    K = B.T @ np.linalg.solve(ops.macro.gram, B)
    return _finish(ops, K, alpha, f, offset, "SF")


def local_matrices_standard(ops: ElementOperators, alpha: float = 0.0, f=None, offset=None) -> LocalMatrices:
    """Consistency term on the Ritz projection plus dofi-dofi stabilization."""
    P = ops.PiStar
    K = P.T @ ops.G @ P
    R = np.eye(ops.layout.n_dofs) - ops.D @ P
    K = K + R.T @ R
    return _finish(ops, K, alpha, f, offset, "standard")


def _finish(ops, K, alpha, f, offset, method):
    K = 0.5 * (K + K.T)
    M = ops.cell.area * ops.Q.T @ ops.Q
    M = 0.5 * (M + M.T)
    load = np.zeros(ops.layout.n_dofs)
    if f is not None:
        load = ops.Q.T @ load_moments(ops.cell, f, ops.layout.k, offset)
    return LocalMatrices(K, M, load, method, alpha)


def interpolate_local(u, cell: Cell, layout: ElementDofLayout, interior_basis: str = "monomial",
                      offset=None, exactness: int | None = None) -> np.ndarray:
    """Local DoFs of the function u (evaluated at physical points)."""
    k = layout.k
    off = np.zeros(2) if offset is None else np.asarray(offset, float)
    q = exactness or max(cell.exactness, 2 * k + 4)
    d = np.zeros(layout.n_dofs)
    if layout.family == "C":
        d[: layout.n_vertices] = u(cell.poly + off)
    for i in range(layout.n_edges):
        pts, s, w = _edge_params(cell, i, q)
        L = orthonormal_legendre_values(s, layout.edge_block - 1)
        d[layout.edge_dofs(i)] = (L * w[:, None]).T @ u(pts + off) / w.sum()
    n2 = layout.n_interior
    if n2:
        pts = cell.qpoints.reshape(-1, 2)
        w = cell.qweights.ravel()
        if interior_basis == "orthonormal":
            phi = cell.basis.values(pts)[:, :n2]
        else:
            phi = cell.monomials.values(pts)[:, :n2]
        d[layout.interior_dofs()] = (phi * w[:, None]).T @ u(pts + off) / cell.area
    return d
