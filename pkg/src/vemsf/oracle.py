"""Fine finite element approximation of virtual functions (test oracle).

A virtual function is the minimum-energy H^1 function matching its moment
data: the edge moments (nonconforming) or the polynomial boundary trace
(conforming), together with all moments against P_k given by the L2 lift
Q_k. The Euler-Lagrange equations give Delta v in P_k and, for the
nonconforming element, normal derivatives in P_{k-1} on each edge, which is
exactly the local space. We solve that constrained minimization with
continuous P_{k+2} elements on a refined sub-triangulation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .femspaces import LagrangeSpace
from .poly import dim_p, legendre_values, orthonormal_legendre_values, quadrature_rule
from .vem import ElementOperators


class OracleError(RuntimeError):
    pass


def refine_triangles(points, triangles, refine: int):
    """Uniformly split each triangle into refine^2 pieces.

    Returns fine points, fine triangles and the parent triangle of each."""
    pts, tris, parent = [], [], []
    index = {}
    scale = float(np.ptp(points, axis=0).max())
    lattice = [(i, j) for j in range(refine + 1) for i in range(refine + 1 - j)]

    def node(x):
        key = tuple(np.round(x / scale * 1e11).astype(np.int64))
        g = index.get(key)
        if g is None:
            g = len(pts)
            index[key] = g
            pts.append(x)
        return g

    for t, tri in enumerate(triangles):
        a, b, c = points[tri]
        ids = {}
        for (i, j) in lattice:
            ids[i, j] = node(a + (b - a) * i / refine + (c - a) * j / refine)
        for j in range(refine):
            for i in range(refine - j):
                tris.append([ids[i, j], ids[i + 1, j], ids[i, j + 1]])
                parent.append(t)
                if i + j < refine - 1:
                    tris.append([ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]])
                    parent.append(t)
    return np.array(pts), np.array(tris, dtype=int), np.array(parent, dtype=int)


@dataclass
class VirtualFunctionApprox:
    """Nodal field of a fine Lagrange space approximating one virtual function."""
    oracle: "VirtualFunctionOracle"
    values: np.ndarray

    def __call__(self, t_fine: int, x) -> np.ndarray:
        sp_ = self.oracle.space
        xi = sp_.to_reference(t_fine, x)
        return sp_.reference_values(xi) @ self.values[sp_.tri_nodes[t_fine]]

    @property
    def gradient_norm(self) -> float:
        return float(np.sqrt(self.values @ (self.oracle.K @ self.values)))

    @property
    def constraint_residual(self) -> float:
        return self.oracle.last_residual


class VirtualFunctionOracle:
    """Factorized constrained minimization for one element; solves many DoF vectors."""

    def __init__(self, ops: ElementOperators, refine: int = 3):
        if refine < 2:
            raise ValueError("refine must be at least 2")
        self.ops = ops
        cell = ops.cell
        lay = ops.layout
        k = lay.k
        st = cell.subtri
        self.refine = refine
        pts, tris, parent = refine_triangles(st.points, st.triangles, refine)
        self.parent = parent
        self.space = LagrangeSpace(pts, tris, k + 2)
        S = self.space
        self.K = S.stiffness_matrix()
        q = 2 * (k + 2) + 2
        P, W, Vals, Grads = S.quadrature_tables(q)
        self.qpoints, self.qweights, self.qvalues, self.qgrads = P, W, Vals, Grads
        nP = dim_p(k)
        # moments against the orthonormal cell polynomials
        rows, cols, data = [], [], []
        for t in range(len(tris)):
            pa = cell.basis.values(P[t])[:, :nP]
            loc = (pa * W[t][:, None]).T @ Vals  # (nP, nloc)
            for a in range(nP):
                rows.append(np.full(loc.shape[1], a))
                cols.append(S.tri_nodes[t])
                data.append(loc[a])
        Cint = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(nP, S.n_nodes))
        self.Cint = Cint
        n = S.n_nodes
        if lay.family == "NC":
            Cedge = self._edge_moment_rows(k)
            C = sp.vstack([Cint, Cedge]).tocsr()
            KKT = sp.bmat([[self.K, C.T], [C, None]]).tocsc()
            self.free = np.arange(n)
            self.C = C
        else:
            self.bnodes = np.flatnonzero(S.boundary_nodes)
            self.free = np.flatnonzero(~S.boundary_nodes)
            self.trace_eval = self._boundary_trace_matrix()
            Kc = self.K.tocsr()
            self.K_IB = Kc[self.free][:, self.bnodes]
            self.C_B = Cint[:, self.bnodes]
            C = Cint[:, self.free]
            self.C = C
            KKT = sp.bmat([[Kc[self.free][:, self.free], C.T], [C, None]]).tocsc()
        try:
            self.lu = spla.splu(KKT)
        except RuntimeError as exc:  # pragma: no cover - diagnostic path
            raise OracleError(f"constraint system singular: {exc}") from exc
        self.last_residual = np.nan

    def _boundary_edges(self):
        """Fine boundary edges as (triangle, local j) grouped by polygon edge."""
        S = self.space
        st = self.ops.cell.subtri
        count = {}
        for t, tri in enumerate(S.triangles):
            for j in range(3):
                key = tuple(sorted((int(tri[j]), int(tri[(j + 1) % 3]))))
                count.setdefault(key, []).append((t, j))
        out = {f: [] for f in range(st.n_poly)}
        poly = self.ops.cell.poly
        for key, lst in count.items():
            if len(lst) != 1:
                continue
            mid = S.points[list(key)].mean(axis=0)
            f = self._polygon_edge_of(mid, poly)
            out[f].append(lst[0])
        return out

    @staticmethod
    def _polygon_edge_of(x, poly):
        n = len(poly)
        best, bd = -1, np.inf
        for f in range(n):
            p, q = poly[f], poly[(f + 1) % n]
            t = q - p
            s = np.clip(np.dot(x - p, t) / np.dot(t, t), 0, 1)
            d = np.linalg.norm(x - p - s * t)
            if d < bd:
                best, bd = f, d
        return best

    def _edge_moment_rows(self, k):
        S = self.space
        poly = self.ops.cell.poly
        lay = self.ops.layout
        rule = quadrature_rule("segment", 2 * (k + 2) + 2)
        rows, cols, data = [], [], []
        for f, lst in self._boundary_edges().items():
            p, q = poly[f], poly[(f + 1) % len(poly)]
            lenF = np.linalg.norm(q - p)
            for (t, j) in lst:
                tri = S.triangles[t]
                a, b = S.points[tri[j]], S.points[tri[(j + 1) % 3]]
                x = a + rule.points[:, 0:1] * (b - a)
                w = rule.weights * np.linalg.norm(b - a)
                sf = (x - p) @ (q - p) / np.dot(q - p, q - p)
                L = orthonormal_legendre_values(sf, k - 1)
                phi = S.reference_values(S.to_reference(t, x))
                loc = (L * w[:, None]).T @ phi / lenF
                dofs = lay.edge_dofs(f)
                for jj in range(k):
                    rows.append(np.full(phi.shape[1], dofs[jj]))
                    cols.append(S.tri_nodes[t])
                    data.append(loc[jj])
        nE = lay.n_edges * lay.edge_block
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(nE, S.n_nodes))

    def _boundary_trace_matrix(self):
        """Map DoF vector -> values at boundary nodes (conforming traces)."""
        S = self.space
        poly = self.ops.cell.poly
        lay = self.ops.layout
        E = np.zeros((len(self.bnodes), lay.n_dofs))
        for r, node in enumerate(self.bnodes):
            x = S.node_coords[node]
            f = self._polygon_edge_of(x, poly)
            p, q = poly[f], poly[(f + 1) % len(poly)]
            s = np.clip(np.dot(x - p, q - p) / np.dot(q - p, q - p), 0.0, 1.0)
            L = legendre_values(np.array([s]), lay.k)[0]
            E[r] = L @ self.ops.trace_maps[f]
        return E

    def solve(self, dof_values: np.ndarray) -> np.ndarray:
        """Nodal values for one DoF vector (n_dofs,) or many (n_dofs, m)."""
        d = np.asarray(dof_values, float)
        single = d.ndim == 1
        if single:
            d = d[:, None]
        ops = self.ops
        area = ops.cell.area
        gint = area * (ops.Q @ d)
        n = self.space.n_nodes
        if ops.layout.family == "NC":
            lay = ops.layout
            gedge = np.vstack([d[lay.edge_dofs(i)] for i in range(lay.n_edges)])
            rhs = np.vstack([np.zeros((n, d.shape[1])), gint, gedge])
            sol = self.lu.solve(rhs)
            u = sol[:n]
            res = self.C @ u - np.vstack([gint, gedge])
        else:
            uB = self.trace_eval @ d
            nf = len(self.free)
            rhs = np.vstack([-(self.K_IB @ uB), gint - self.C_B @ uB])
            sol = self.lu.solve(rhs)
            u = np.zeros((n, d.shape[1]))
            u[self.free] = sol[:nf]
            u[self.bnodes] = uB
            res = self.Cint @ u - gint
        self.last_residual = float(np.abs(res).max() / max(np.abs(gint).max(), 1e-300))
        return u[:, 0] if single else u

    def macro_moments(self, u: np.ndarray) -> np.ndarray:
        """(phi_i, grad u)_K for the macro basis, by fine quadrature."""
        macro = self.ops.macro
        S = self.space
        u = np.asarray(u, float)
        single = u.ndim == 1
        if single:
            u = u[:, None]
        out = np.zeros((macro.dim, u.shape[1]))
        for t in range(len(S.triangles)):
            phi = macro.values_on_triangle(self.parent[t], self.qpoints[t])
            grad = np.einsum("qlc,lm->qmc", self.qgrads[t], u[S.tri_nodes[t]])
            out += np.einsum("q,qic,qmc->im", self.qweights[t], phi, grad)
        return out[:, 0] if single else out

    def energy_norms(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, float)
        if u.ndim == 1:
            return np.sqrt(u @ (self.K @ u))
        return np.sqrt(np.einsum("nm,nm->m", u, self.K @ u))

    def nodal_interpolant(self, func) -> np.ndarray:
        return np.asarray(func(self.space.node_coords), float)


def approximate_virtual_function(ops: ElementOperators, dof_values, refine: int = 3) -> VirtualFunctionApprox:
    """Fine-mesh approximation of the virtual function with the given DoFs."""
    oracle = VirtualFunctionOracle(ops, refine)
    return VirtualFunctionApprox(oracle, oracle.solve(dof_values))
