"""Simplicial partitions of a single polygonal cell."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MeshError, polygon_area
from .geometry import inball_center, polygon_centroid

STRATEGIES = ("inball-fan", "centroid-fan", "ear-clip")


@dataclass
class SubTriangulation:
    """Triangles of a cell and their edge tables.

    The first ``n_poly`` local points are the polygon vertices in loop order.
    Local edge ``e`` joins ``edges[e, 0] < edges[e, 1]`` and carries the unit
    normal obtained by rotating its tangent clockwise. ``tri_edges[t, j]`` is
    the edge from ``triangles[t, j]`` to ``triangles[t, (j+1) % 3]``.
    ``edge_parent[e]`` is the polygon edge containing a boundary sub-edge
    (-1 for interior edges), and ``edge_sign[e]`` is +1 when the fixed normal
    of the sub-edge points out of the cell.
    """
    points: np.ndarray
    triangles: np.ndarray
    n_poly: int
    strategy: str
    edges: np.ndarray = field(init=False)
    edge_normals: np.ndarray = field(init=False)
    edge_lengths: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)
    edge_parent: np.ndarray = field(init=False)
    edge_sign: np.ndarray = field(init=False)
    edge_tris: np.ndarray = field(init=False)

    def __post_init__(self):
        idx = {}
        edges, tris_of = [], []
        te = np.zeros((len(self.triangles), 3), dtype=int)
        for t, tri in enumerate(self.triangles):
            for j in range(3):
                a, b = int(tri[j]), int(tri[(j + 1) % 3])
                key = (min(a, b), max(a, b))
                e = idx.get(key)
                if e is None:
                    e = len(edges)
                    idx[key] = e
                    edges.append(key)
                    tris_of.append([t, -1])
                else:
                    tris_of[e][1] = t
                te[t, j] = e
        self.edges = np.array(edges, dtype=int)
        self.edge_tris = np.array(tris_of, dtype=int)
        self.tri_edges = te
        d = self.points[self.edges[:, 1]] - self.points[self.edges[:, 0]]
        self.edge_lengths = np.linalg.norm(d, axis=1)
        d = d / self.edge_lengths[:, None]
        self.edge_normals = np.column_stack([d[:, 1], -d[:, 0]])
        self.edge_parent = -np.ones(len(edges), dtype=int)
        self.edge_sign = np.zeros(len(edges), dtype=int)
        n = self.n_poly
        poly = self.points[:n]
        for e, (a, b) in enumerate(self.edges):
            if self.edge_tris[e, 1] >= 0:
                continue
            # boundary sub-edge: find the polygon edge containing it
            mid = 0.5 * (self.points[a] + self.points[b])
            best, bd = -1, np.inf
            for f in range(n):
                p, q = poly[f], poly[(f + 1) % n]
                t = q - p
                s = np.clip(np.dot(mid - p, t) / np.dot(t, t), 0, 1)
                dist = np.linalg.norm(mid - p - s * t)
                if dist < bd:
                    best, bd = f, dist
            self.edge_parent[e] = best
            p, q = poly[best], poly[(best + 1) % n]
            t = q - p
            out = np.array([t[1], -t[0]])
            self.edge_sign[e] = 1 if np.dot(out, self.edge_normals[e]) > 0 else -1

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_parent < 0)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_parent >= 0)

    @property
    def interior_vertices(self) -> np.ndarray:
        on_bd = np.zeros(len(self.points), dtype=bool)
        on_bd[self.edges[self.edge_parent >= 0].ravel()] = True
        return np.flatnonzero(~on_bd)

    @property
    def coords(self) -> np.ndarray:
        """Triangle vertex coordinates, shape (nt, 3, 2)."""
        return self.points[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.coords
        e1, e2 = c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def min_angle(self) -> float:
        c = self.coords
        out = np.pi
        for j in range(3):
            u = c[:, (j + 1) % 3] - c[:, j]
            v = c[:, (j + 2) % 3] - c[:, j]
            cosang = (u * v).sum(1) / np.linalg.norm(u, axis=1) / np.linalg.norm(v, axis=1)
            out = min(out, float(np.arccos(np.clip(cosang, -1, 1)).min()))
        return out

    def sub_edges_of(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.edge_parent == f)


def _fan(poly: np.ndarray, center: np.ndarray):
    n = len(poly)
    tris = np.array([[i, (i + 1) % n, n] for i in range(n)], dtype=int)
    pts = np.vstack([poly, center])
    scale = float(np.ptp(poly, axis=0).max())
    c = pts[tris]
    e1, e2 = c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # admissible iff every fan triangle is positively oriented
    if np.any(det <= 1e-12 * scale * scale):
        return None
    return pts, tris


def _ear_clip(poly: np.ndarray):
    n = len(poly)
    scale = float(np.ptp(poly, axis=0).max())
    tol = 1e-12 * scale * scale
    remaining = list(range(n))
    tris = []

    def cross(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    guard = 0
    while len(remaining) > 3:
        guard += 1
        if guard > 4 * n * n:
            return None
        m = len(remaining)
        best, best_q = None, -np.inf
        for i in range(m):
            ia, ib, ic = remaining[i - 1], remaining[i], remaining[(i + 1) % m]
            a, b, c = poly[ia], poly[ib], poly[ic]
            if cross(a, b, c) <= tol:
                continue
            ok = True
            for j in remaining:
                if j in (ia, ib, ic):
                    continue
                p = poly[j]
                if cross(a, b, p) >= -tol and cross(b, c, p) >= -tol and cross(c, a, p) >= -tol:
                    ok = False
                    break
            if not ok:
                continue
            # prefer the best-shaped ear
            la, lb, lc = (np.linalg.norm(b - c), np.linalg.norm(c - a), np.linalg.norm(a - b))
            q = cross(a, b, c) / (la * la + lb * lb + lc * lc)
            if q > best_q:
                best, best_q = i, q
        if best is None:
            return None
        m = len(remaining)
        tris.append([remaining[best - 1], remaining[best], remaining[(best + 1) % m]])
        remaining.pop(best)
    a, b, c = (poly[i] for i in remaining)
    if cross(a, b, c) <= tol:
        return None
    tris.append(remaining)
    return poly.copy(), np.array(tris, dtype=int)


def subtriangulate(poly, strategy: str = "inball-fan", center=None) -> SubTriangulation:
    """Partition a counterclockwise polygon into triangles.

    Fan strategies connect every vertex to one interior point and fall back
    to ear clipping when some fan triangle would be inverted or flat.
    """
    poly = np.asarray(poly, dtype=float)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown sub-triangulation strategy {strategy!r}")
    if polygon_area(poly) <= 0:
        raise MeshError("polygon must be counterclockwise with positive area")
    res = None
    used = strategy
    if strategy != "ear-clip":
        if center is None:
            center = inball_center(poly)[0] if strategy == "inball-fan" else polygon_centroid(poly)
        res = _fan(poly, np.asarray(center, float))
        if res is None:
            used = "ear-clip"
    if res is None:
        res = _ear_clip(poly)
    if res is None:
        raise MeshError("sub-triangulation failed")
    pts, tris = res
    return SubTriangulation(pts, tris, len(poly), used)
