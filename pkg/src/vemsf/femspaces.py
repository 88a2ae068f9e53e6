"""Finite elements on a cell's sub-triangulation.

``TriangleDivBasis`` is the BDM_r element (RT_0 for r = 0) on one triangle,
``PiecewiseDivSpace`` glues those into an H(div)-conforming space on a cell
and ``LagrangeSpace`` is the continuous piecewise P_m space whose interior
(ring) part feeds the curl.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .poly import dim_p, legendre_values, quadrature_rule, reference_triangle_basis

MAX_DIV_DEGREE = 11


def _affine(coords):
    coords = np.asarray(coords, dtype=float)
    J = np.column_stack([coords[1] - coords[0], coords[2] - coords[0]])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return J, det


class TriangleDivBasis:
    """Shape functions of BDM_r (r >= 1) or RT_0 (r = 0) on one triangle.

    Functions are stored as coefficients over the vector basis
    ``e_c * psi_b(xi(x))``, where ``psi`` is the orthonormal basis of P_R on the
    reference triangle (R = max(r, 1)) and ``xi`` the affine pull-back.
    Degrees of freedom, in order:

    * edge j (from vertex j to j+1), l = 0..r: (1/|e|) (v.n_e, P_l)_e, where
      the edge is parametrized from ``starts[j]`` and ``n_e`` is the clockwise
      rotation of that direction;
    * r >= 2: (h_T/|T|) (div v, psi_b)_T for the mean-free psi_b of P_{r-1};
    * r >= 2: (1/|T|) (v, psi_b (y - y_c, -(x - x_c)) / h_T)_T, psi_b in P_{r-2}.
    """

    def __init__(self, coords, r: int, flip=(False, False, False)):
        if not 0 <= r <= MAX_DIV_DEGREE:
            raise ValueError(f"div degree {r} out of range")
        self.coords = np.asarray(coords, dtype=float)
        self.r = int(r)
        self.R = max(self.r, 1)
        self.J, self.det = _affine(self.coords)
        scale = float(np.ptp(self.coords, axis=0).max())
        if abs(self.det) <= 1e-14 * scale * scale:
            raise ValueError("degenerate triangle")
        self.Jinv = np.linalg.inv(self.J)
        self.area = 0.5 * abs(self.det)
        self.h = float(max(np.linalg.norm(self.coords[i] - self.coords[j])
                           for i in range(3) for j in range(i)))
        self.center = self.coords.mean(axis=0)
        self.flip = tuple(bool(f) for f in flip)
        self.ref = reference_triangle_basis(self.R)
        self.nref = self.ref.size
        self.n_vector = 2 * self.nref
        r = self.r
        self.n_edge = r + 1
        self.n_div = dim_p(r - 1) - 1 if r >= 2 else 0
        self.n_rot = dim_p(r - 2) if r >= 2 else 0
        self.n_interior = self.n_div + self.n_rot
        self.dim = 3 * self.n_edge + self.n_interior
        if r == 0:
            # RT_0 inside P_1^2: e_0, e_1 and x - barycenter
            pts = quadrature_rule("triangle", 2).points
            phys = self.to_physical(pts)
            Vref = self.ref.values(pts)
            fit = np.linalg.lstsq(Vref, phys - self.center, rcond=None)[0]
            S = np.zeros((self.n_vector, 3))
            S[0, 0] = 1.0 / Vref[0, 0]
            S[self.nref, 1] = 1.0 / Vref[0, 0]
            S[: self.nref, 2] = fit[:, 0]
            S[self.nref:, 2] = fit[:, 1]
        else:
            S = np.eye(self.n_vector)
        self.dof_matrix = self.apply_dofs(self._vector_basis_field(S))
        self.coeffs = S @ np.linalg.inv(self.dof_matrix)

    # -- geometry ---------------------------------------------------------
    def to_physical(self, xi):
        return self.coords[0] + np.asarray(xi).reshape(-1, 2) @ self.J.T

    def to_reference(self, x):
        return (np.asarray(x, float).reshape(-1, 2) - self.coords[0]) @ self.Jinv.T

    def edge_endpoints(self, j: int):
        a, b = self.coords[j], self.coords[(j + 1) % 3]
        return (b, a) if self.flip[j] else (a, b)

    # -- evaluation ---------------------------------------------------------
    def vector_basis(self, x) -> np.ndarray:
        """Values of e_c psi_b at physical points, shape (npts, n_vector, 2)."""
        psi = self.ref.values(self.to_reference(x))
        n = psi.shape[0]
        out = np.zeros((n, self.n_vector, 2))
        out[:, : self.nref, 0] = psi
        out[:, self.nref:, 1] = psi
        return out

    def vector_basis_div(self, x) -> np.ndarray:
        g = self.ref.gradients(self.to_reference(x))  # d psi / d xi
        gx = g @ self.Jinv  # (npts, nref, 2): d psi / d x_c
        return np.concatenate([gx[:, :, 0], gx[:, :, 1]], axis=1)

    def _vector_basis_field(self, S):
        return lambda x: np.einsum("pvc,vn->pnc", self.vector_basis(x), S)

    def values(self, x) -> np.ndarray:
        """Shape function values, shape (npts, dim, 2)."""
        return np.einsum("pvc,vn->pnc", self.vector_basis(x), self.coeffs)

    def divergence(self, x) -> np.ndarray:
        return self.vector_basis_div(x) @ self.coeffs

    def div_coefficients(self) -> np.ndarray:
        """Coefficients of div of each shape function in the basis psi_b / sqrt|T|
        (orthonormal on T), rows b < dim P_max(r-1, 0)."""
        gx, gy = self.ref.gradient_matrices()
        Jinv = self.Jinv
        dx = gx * Jinv[0, 0] + gy * Jinv[1, 0]
        dy = gx * Jinv[0, 1] + gy * Jinv[1, 1]
        D = np.hstack([dx, dy]) @ self.coeffs
        nd = dim_p(max(self.r - 1, 0))
        return np.sqrt(self.area) * D[:nd]

    # -- degrees of freedom -------------------------------------------------
    def apply_dofs(self, field) -> np.ndarray:
        """Evaluate all DoFs of a vector field; ``field(x)`` returns
        (npts, ncols, 2). Result has shape (dim, ncols)."""
        r = self.r
        qe = 2 * self.R + 2
        rows = []
        for j in range(3):
            a, b = self.edge_endpoints(j)
            rule = quadrature_rule("segment", qe)
            s = rule.points[:, 0]
            x = a + s[:, None] * (b - a)
            t = b - a
            n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
            vn = np.einsum("pnc,c->pn", field(x), n)
            L = legendre_values(s, r)
            rows.append((L * rule.weights[:, None]).T @ vn)
        if self.n_interior:
            pts_ref = quadrature_rule("triangle", 2 * self.R + 2)
            x = self.to_physical(pts_ref.points)
            w = pts_ref.weights * abs(self.det)
            vals = field(x)
            psi = self.ref.values(pts_ref.points)
            # divergence moments via integration by parts against the mean-free psi_b
            nd = dim_p(r - 1)
            g = self.ref.gradients(pts_ref.points)[:, 1:nd, :] @ self.Jinv  # grad psi_b
            div_rows = -np.einsum("pbc,pnc,p->bn", g, vals, w)
            # boundary part of the integration by parts
            bnd = np.zeros_like(div_rows)
            for j in range(3):
                a, b = self.coords[j], self.coords[(j + 1) % 3]
                rule = quadrature_rule("segment", qe)
                s = rule.points[:, 0]
                xe = a + s[:, None] * (b - a)
                t = b - a
                n_out = np.array([t[1], -t[0]]) / np.linalg.norm(t) * np.sign(self.det)
                vn = np.einsum("pnc,c->pn", field(xe), n_out)
                pv = self.ref.values(self.to_reference(xe))[:, 1:nd]
                bnd += (pv * (rule.weights * np.linalg.norm(t))[:, None]).T @ vn
            rows.append((div_rows + bnd) * self.h / self.area)
            nr = dim_p(r - 2)
            rot = np.column_stack([x[:, 1] - self.center[1], -(x[:, 0] - self.center[0])]) / self.h
            test = psi[:, :nr, None] * rot[:, None, :]
            rows.append(np.einsum("pbc,pnc,p->bn", test, vals, w) / self.area)
        return np.vstack(rows)


class PiecewiseDivSpace:
    """H(div)-conforming BDM_r / RT_0 space on a sub-triangulation.

    Global DoFs: sub-edge e owns indices e*(r+1) .. e*(r+1)+r (moments of the
    normal component for the sub-edge's fixed normal), followed by the
    interior DoFs of each triangle.
    """

    def __init__(self, subtri, r: int):
        self.subtri = subtri
        self.r = int(r)
        tris = subtri.triangles
        self.elements = []
        for t in range(len(tris)):
            flip = [tris[t, j] > tris[t, (j + 1) % 3] for j in range(3)]
            self.elements.append(TriangleDivBasis(subtri.points[tris[t]], r, flip))
        el = self.elements[0]
        self.n_edge_dofs = subtri.n_edges * el.n_edge
        self.n_interior_per_tri = el.n_interior
        self.dim = self.n_edge_dofs + len(tris) * el.n_interior
        loc = np.zeros((len(tris), el.dim), dtype=int)
        ne = el.n_edge
        for t in range(len(tris)):
            for j in range(3):
                e = subtri.tri_edges[t, j]
                loc[t, j * ne:(j + 1) * ne] = e * ne + np.arange(ne)
            loc[t, 3 * ne:] = self.n_edge_dofs + t * el.n_interior + np.arange(el.n_interior)
        self.tri_dofs = loc

    @property
    def n_triangles(self) -> int:
        return len(self.elements)

    def scatter(self, t: int, local: np.ndarray) -> np.ndarray:
        """Embed per-triangle columns (local dofs x ...) into global rows."""
        out = np.zeros((self.dim,) + local.shape[1:])
        out[self.tri_dofs[t]] = local
        return out

    def mass_matrix(self) -> np.ndarray:
        M = np.zeros((self.dim, self.dim))
        for t, el in enumerate(self.elements):
            idx = self.tri_dofs[t]
            M[np.ix_(idx, idx)] += el.area * el.coeffs.T @ el.coeffs
        return M

    def divergence_matrix(self) -> np.ndarray:
        """Piecewise divergence in the orthonormal piecewise P_max(r-1,0) basis:
        rows grouped by triangle."""
        nd = dim_p(max(self.r - 1, 0))
        D = np.zeros((self.n_triangles * nd, self.dim))
        for t, el in enumerate(self.elements):
            D[t * nd:(t + 1) * nd, self.tri_dofs[t]] = el.div_coefficients()
        return D

    def quadrature_tables(self, exactness: int):
        """Points (nt, nq, 2), weights (nt, nq), shape values (nt, nq, nloc, 2)
        and divergences (nt, nq, nloc)."""
        rule = quadrature_rule("triangle", exactness)
        P, W, V, Dv = [], [], [], []
        for el in self.elements:
            x = el.to_physical(rule.points)
            P.append(x)
            W.append(rule.weights * abs(el.det))
            V.append(el.values(x))
            Dv.append(el.divergence(x))
        return np.array(P), np.array(W), np.array(V), np.array(Dv)

    def interpolate(self, field_per_triangle) -> np.ndarray:
        """Global coefficients of piecewise fields; ``field_per_triangle(t, x)``
        returns (npts, ncols, 2). Shared edge DoFs are taken from the first
        triangle seen (they agree for normal-continuous input)."""
        out = None
        for t, el in enumerate(self.elements):
            vals = el.apply_dofs(lambda x, t=t: field_per_triangle(t, x))
            if out is None:
                out = np.zeros((self.dim, vals.shape[1]))
            out[self.tri_dofs[t]] = vals
        return out


@lru_cache(maxsize=None)
def _lagrange_reference(m: int):
    lattice = [(i, j) for j in range(m + 1) for i in range(m + 1 - j)]
    nodes = np.array(lattice, dtype=float) / m
    ref = reference_triangle_basis(m)
    V = ref.values(nodes)
    C = np.linalg.inv(V)
    return lattice, nodes, ref, C


class LagrangeSpace:
    """Continuous piecewise P_m on a triangle mesh.

    Global nodes: mesh points first, then m-1 nodes per edge ordered from the
    lower to the higher endpoint index, then interior nodes per triangle.
    """

    def __init__(self, points, triangles, m: int):
        if m < 1:
            raise ValueError("Lagrange degree must be at least 1")
        self.points = np.asarray(points, dtype=float)
        self.triangles = np.asarray(triangles, dtype=int)
        self.m = int(m)
        lattice, self.ref_nodes, self.ref, self.C = _lagrange_reference(self.m)
        edge_idx = {}
        edges = []
        for tri in self.triangles:
            for j in range(3):
                a, b = int(tri[j]), int(tri[(j + 1) % 3])
                key = (min(a, b), max(a, b))
                if key not in edge_idx:
                    edge_idx[key] = len(edges)
                    edges.append(key)
        self.edges = np.array(edges, dtype=int).reshape(-1, 2)
        count = {}
        for tri in self.triangles:
            for j in range(3):
                key = (min(tri[j], tri[(j + 1) % 3]), max(tri[j], tri[(j + 1) % 3]))
                count[key] = count.get(key, 0) + 1
        self.edge_boundary = np.array([count[tuple(e)] == 1 for e in edges], dtype=bool)
        nv = len(self.points)
        ne = len(edges)
        mi = (m - 1) * (m - 2) // 2
        self.n_nodes = nv + ne * (m - 1) + len(self.triangles) * mi
        loc = np.zeros((len(self.triangles), len(lattice)), dtype=int)
        for t, tri in enumerate(self.triangles):
            inner = 0
            for p, (i, j) in enumerate(lattice):
                lam = (m - i - j, i, j)
                zero = [q for q in range(3) if lam[q] == 0]
                if len(zero) == 2:
                    loc[t, p] = tri[[q for q in range(3) if lam[q] == m][0]]
                elif len(zero) == 1:
                    a_loc, b_loc = [q for q in range(3) if lam[q] != 0]
                    a, b = int(tri[a_loc]), int(tri[b_loc])
                    e = edge_idx[(min(a, b), max(a, b))]
                    pos = lam[b_loc] if a < b else lam[a_loc]  # steps from the lower endpoint
                    loc[t, p] = nv + e * (m - 1) + pos - 1
                else:
                    loc[t, p] = nv + ne * (m - 1) + t * mi + inner
                    inner += 1
        self.tri_nodes = loc
        on_bd = np.zeros(self.n_nodes, dtype=bool)
        for e in np.flatnonzero(self.edge_boundary):
            a, b = self.edges[e]
            on_bd[[a, b]] = True
            on_bd[nv + e * (m - 1) + np.arange(m - 1)] = True
        self.boundary_nodes = on_bd
        coords = np.zeros((self.n_nodes, 2))
        for t, tri in enumerate(self.triangles):
            J, _ = _affine(self.points[tri])
            coords[loc[t]] = self.points[tri[0]] + self.ref_nodes @ J.T
        self.node_coords = coords
        self._geom = [_affine(self.points[tri]) for tri in self.triangles]

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_nodes)

    def reference_values(self, xi) -> np.ndarray:
        return self.ref.values(xi) @ self.C

    def reference_gradients(self, xi) -> np.ndarray:
        return np.einsum("pbc,bn->pnc", self.ref.gradients(xi), self.C)

    def local_gradients(self, t: int, xi) -> np.ndarray:
        J, _ = self._geom[t]
        return self.reference_gradients(xi) @ np.linalg.inv(J)

    def to_reference(self, t: int, x) -> np.ndarray:
        J, _ = self._geom[t]
        return (np.asarray(x, float).reshape(-1, 2) - self.points[self.triangles[t, 0]]) @ np.linalg.inv(J).T

    def local_curls(self, t: int, x) -> np.ndarray:
        """Curl (d_y q, -d_x q) of the local shape functions at physical points."""
        g = self.local_gradients(t, self.to_reference(t, x))
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def stiffness_matrix(self) -> sp.csr_matrix:
        rule = quadrature_rule("triangle", 2 * self.m)
        G = self.reference_gradients(rule.points)
        rows, cols, vals = [], [], []
        for t in range(len(self.triangles)):
            J, det = self._geom[t]
            g = G @ np.linalg.inv(J)
            Kt = np.einsum("pic,pjc,p->ij", g, g, rule.weights * abs(det))
            idx = self.tri_nodes[t]
            rows.append(np.repeat(idx, len(idx)))
            cols.append(np.tile(idx, len(idx)))
            vals.append(Kt.ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n_nodes, self.n_nodes))

    def quadrature_tables(self, exactness: int):
        """Points (nt, nq, 2), weights, values (nq, nloc) and gradients (nt, nq, nloc, 2)."""
        rule = quadrature_rule("triangle", exactness)
        Vals = self.reference_values(rule.points)
        G = self.reference_gradients(rule.points)
        P, W, Gr = [], [], []
        for t, tri in enumerate(self.triangles):
            J, det = self._geom[t]
            P.append(self.points[tri[0]] + rule.points @ J.T)
            W.append(rule.weights * abs(det))
            Gr.append(G @ np.linalg.inv(J))
        return np.array(P), np.array(W), Vals, np.array(Gr)


class LagrangeMacroSpace(LagrangeSpace):
    """Lagrange space on a cell's sub-triangulation with its ring subspace."""

    def __init__(self, subtri, m: int):
        super().__init__(subtri.points, subtri.triangles, m)
        self.subtri = subtri

    @property
    def n_interior(self) -> int:
        return int((~self.boundary_nodes).sum())

    def curl_in_div_space(self, space: PiecewiseDivSpace, nodes=None) -> np.ndarray:
        """Coefficients in ``space`` of the curls of the given nodal basis
        functions (default: the ring functions)."""
        if nodes is None:
            nodes = self.interior_nodes
        nodes = np.asarray(nodes, dtype=int)
        sel = {int(n): i for i, n in enumerate(nodes)}

        def field(t, x):
            c = self.local_curls(t, x)
            out = np.zeros((c.shape[0], len(nodes), 2))
            for p, g in enumerate(self.tri_nodes[t]):
                i = sel.get(int(g))
                if i is not None:
                    out[:, i, :] = c[:, p, :]
            return out

        return space.interpolate(field)


def triangle_div_basis(coords, r: int, flip=(False, False, False)) -> TriangleDivBasis:
    return TriangleDivBasis(coords, r, flip)


def assemble_piecewise_div_space(subtri, r: int) -> PiecewiseDivSpace:
    return PiecewiseDivSpace(subtri, r)


def lagrange_macro_space(subtri, m: int) -> LagrangeMacroSpace:
    return LagrangeMacroSpace(subtri, m)
