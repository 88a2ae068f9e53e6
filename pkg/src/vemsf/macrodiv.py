"""Constrained H(div) macro spaces on a cell and their L2 projectors.

A macro space is carved out of a piecewise BDM_r / RT_0 space on the cell's
sub-triangulation by requiring the divergence to be one polynomial of degree
<= s on the whole cell and the normal trace on each polygon edge to be one
polynomial of the trace degree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .cell import Cell
from .femspaces import LagrangeMacroSpace, PiecewiseDivSpace
from .poly import dim_p, legendre_values, quadrature_rule

MODES = ("NC", "C", "C-reduced")
NULLSPACE_CUTOFF = 1e-10


class RankDecisionError(RuntimeError):
    """Singular values too close to the nullspace cutoff to decide the rank."""


@dataclass(frozen=True)
class MacroDegrees:
    parent: int
    div_cap: int
    trace: int
    lagrange: int


def macro_degrees(k: int, mode: str) -> MacroDegrees:
    if k < 1:
        raise ValueError("k must be at least 1")
    if mode == "NC":
        return MacroDegrees(max(k - 1, 0), max(k - 2, 0), k - 1, k)
    if mode == "C":
        return MacroDegrees(k, k - 1, k, k + 1)
    if mode == "C-reduced":
        if k < 2:
            raise ValueError("C-reduced mode needs k >= 2")
        return MacroDegrees(k, k - 2, k, k + 1)
    raise ValueError(f"unknown macro mode {mode!r}")


def interior_lagrange_count(subtri, m: int) -> int:
    nt = subtri.n_triangles
    return (len(subtri.interior_vertices) + (m - 1) * len(subtri.interior_edges)
            + nt * (m - 1) * (m - 2) // 2)


def dof_count(subtri, k: int, mode: str) -> int:
    """Dimension predicted by the macro DoFs: normal-trace moments per polygon
    edge, mean-free divergence moments and the ring-curl block."""
    d = macro_degrees(k, mode)
    return (subtri.n_poly * (d.trace + 1) + dim_p(d.div_cap) - 1
            + interior_lagrange_count(subtri, d.lagrange))


def nullspace(C: np.ndarray, n: int, cutoff: float = NULLSPACE_CUTOFF):
    """Orthonormal nullspace of C (rows may be empty) with a rank gap check."""
    if C.shape[0] == 0:
        return np.eye(n), np.zeros(0)
    norms = np.linalg.norm(C, axis=1)
    C = C[norms > 0] / norms[norms > 0, None]
    _, s, vt = np.linalg.svd(C, full_matrices=True)
    smax = s[0] if s.size else 0.0
    if smax == 0:
        return np.eye(n), s
    rel = s / smax
    amb = (rel > cutoff / 10) & (rel < cutoff * 10)
    if np.any(amb):
        raise RankDecisionError(
            f"singular values {s[amb]} within a factor 10 of the cutoff {cutoff:g}")
    rank = int((rel > cutoff).sum())
    return vt[rank:].T, s


class MacroDivSpace:
    """Constrained macro space as parent coefficients ``N`` (columns).

    The basis is orthonormal in L2(K), so the Gram matrix is the identity up to
    rounding. ``div_moments[i, a] = (div phi_i, p_a)_K`` for the cell's
    orthonormal polynomials p_a of degree <= s, and ``traces[f][i, j] =
    (phi_i . n_K, P_j)_F`` with P_j the Legendre polynomial on polygon edge f
    parametrized counterclockwise.
    """

    def __init__(self, cell: Cell, k: int, mode: str):
        self.cell = cell
        self.k = int(k)
        self.mode = mode
        self.degrees = macro_degrees(k, mode)
        d = self.degrees
        if cell.degree < d.div_cap:
            raise ValueError("cell basis degree below the divergence cap")
        st = cell.subtri
        self.parent = PiecewiseDivSpace(st, d.parent)
        par = self.parent
        rdiv = max(d.parent - 1, 0)
        nd = dim_p(rdiv)
        ns = dim_p(d.div_cap)

        # global P_s inside the orthonormal piecewise P_rdiv basis
        rule = quadrature_rule("triangle", min(2 * max(rdiv, d.div_cap) + 2, 30))
        G = np.zeros((par.n_triangles * nd, ns))
        for t, el in enumerate(par.elements):
            x = el.to_physical(rule.points)
            w = rule.weights * abs(el.det)
            psi = el.ref.values(rule.points)[:, :nd] / np.sqrt(el.area)
            pa = cell.basis.values(x)[:, :ns]
            G[t * nd:(t + 1) * nd] = (psi * w[:, None]).T @ pa
        self.div_matrix = par.divergence_matrix()
        Qg, _ = np.linalg.qr(G, mode="complete")
        Z = Qg[:, ns:]
        constraints = [Z.T @ self.div_matrix]
        constraints.append(self._trace_constraints())
        C = np.vstack(constraints)
        M_parent = par.mass_matrix()
        scale = 1.0 / np.sqrt(np.diag(M_parent))
        null, self.singular_values = nullspace(C * scale[None, :], par.dim)
        self.constraint_matrix = C
        N_raw = scale[:, None] * null
        gram_raw = N_raw.T @ M_parent @ N_raw
        L = cholesky(gram_raw, lower=True)
        self.N_raw = N_raw
        self.gram_raw = gram_raw
        self.N = solve_triangular(L, N_raw.T, lower=True).T
        self.gram = self.N.T @ M_parent @ self.N
        self.dim = self.N.shape[1]
        self.div_moments = (G.T @ self.div_matrix @ self.N).T
        self.traces = self._polygon_traces()
        self._tables = None

    # -- constraints ----------------------------------------------------------
    def _edge_legendre_products(self, e: int, f: int, deg_f: int) -> np.ndarray:
        """W[l, j] = int_e P_l(s_e) P_j(s_f) with s_e along the sub-edge's
        lower->higher direction and s_f counterclockwise along polygon edge f."""
        st = self.cell.subtri
        r = self.degrees.parent
        a, b = st.points[st.edges[e]]
        p, q = self.cell.edge(f)
        rule = quadrature_rule("segment", r + deg_f + 2)
        s = rule.points[:, 0]
        x = a + s[:, None] * (b - a)
        sf = (x - p) @ (q - p) / np.dot(q - p, q - p)
        w = rule.weights * np.linalg.norm(b - a)
        return (legendre_values(s, r) * w[:, None]).T @ legendre_values(sf, deg_f)

    def _trace_rows(self, e: int) -> np.ndarray:
        """Parent DoF rows of the outward normal trace on sub-edge e, scaled so
        that entry (l, dof) is the Legendre coefficient of phi.n_K."""
        st = self.cell.subtri
        ne = self.degrees.parent + 1
        rows = np.zeros((ne, self.parent.dim))
        for l in range(ne):
            rows[l, e * ne + l] = st.edge_sign[e] * (2 * l + 1)
        return rows

    def _trace_constraints(self) -> np.ndarray:
        st = self.cell.subtri
        t = self.degrees.trace
        blocks = []
        for f in range(st.n_poly):
            subs = st.sub_edges_of(f)
            if len(subs) <= 1 and t >= self.degrees.parent:
                continue
            # orthonormal piecewise Legendre coordinates of phi.n on edge f
            rows, cols = [], []
            for e in subs:
                ne = self.degrees.parent + 1
                le = st.edge_lengths[e]
                nrm = np.sqrt(le / (2 * np.arange(ne) + 1))
                rows.append(nrm[:, None] * self._trace_rows(e))
                # global P_t(F) members in the same coordinates
                W = self._edge_legendre_products(e, f, t)
                cols.append(W / nrm[:, None])
            R = np.vstack(rows)
            H = np.vstack(cols)
            Qh, _ = np.linalg.qr(H, mode="complete")
            blocks.append(Qh[:, H.shape[1]:].T @ R)
        if not blocks:
            return np.zeros((0, self.parent.dim))
        return np.vstack(blocks)

    def _polygon_traces(self) -> list:
        st = self.cell.subtri
        t = self.degrees.trace
        out = []
        for f in range(st.n_poly):
            T = np.zeros((self.dim, t + 1))
            for e in st.sub_edges_of(f):
                W = self._edge_legendre_products(e, f, t)
                T += (self._trace_rows(e) @ self.N).T @ W
            out.append(T)
        return out

    # -- evaluation -------------------------------------------------------------
    def tables(self):
        """Cell quadrature points/weights and macro basis values (nt, nq, dim, 2)."""
        if self._tables is None:
            P, W, V, _ = self.parent.quadrature_tables(self.cell.exactness)
            vals = np.stack([np.einsum("qlc,ln->qnc", V[t], self.N[self.parent.tri_dofs[t]])
                             for t in range(self.parent.n_triangles)])
            self._tables = (P, W, vals)
        return self._tables

    def values_on_triangle(self, t: int, x) -> np.ndarray:
        el = self.parent.elements[t]
        return np.einsum("plc,ln->pnc", el.values(x), self.N[self.parent.tri_dofs[t]])

    def divergence_on_triangle(self, t: int, x) -> np.ndarray:
        el = self.parent.elements[t]
        return el.divergence(x) @ self.N[self.parent.tri_dofs[t]]

    def evaluate(self, coeffs, x_per_triangle) -> list:
        """Field values of sum_i c_i phi_i on each triangle's points."""
        return [np.einsum("pnc,n->pc", self.values_on_triangle(t, x), coeffs)
                for t, x in enumerate(x_per_triangle)]

    def moments(self, g) -> np.ndarray:
        """b_i = (phi_i, g)_K by sub-triangle quadrature; ``g(x)`` returns (npts, 2)."""
        P, W, V = self.tables()
        gv = np.asarray(g(P.reshape(-1, 2)), float).reshape(P.shape)
        return np.einsum("tq,tqnc,tqc->n", W, V, gv)

    # -- complex structure --------------------------------------------------------
    def ring_curls(self) -> tuple[np.ndarray, LagrangeMacroSpace]:
        """Parent coefficients of the curls of the ring Lagrange functions."""
        lag = LagrangeMacroSpace(self.cell.subtri, self.degrees.lagrange)
        return lag.curl_in_div_space(self.parent), lag


def build_macro_div_space(cell: Cell, k: int, mode: str) -> MacroDivSpace:
    return MacroDivSpace(cell, k, mode)


def project_field(space: MacroDivSpace, g) -> np.ndarray:
    """Coefficients of the L2 projection of the vector field g onto the space."""
    return np.linalg.solve(space.gram, space.moments(g))
