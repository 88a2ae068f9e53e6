"""Polygonal mesh container and JSON I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Invalid mesh input."""


def polygon_area(pts: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise loops)."""
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, q1, q2, tol) -> bool:
    """True if the closed segments p1p2 and q1q2 touch or cross."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and \
       ((d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)):
        return True

    def on_seg(a, b, c, d):
        return abs(d) <= tol and min(a[0], b[0]) - tol <= c[0] <= max(a[0], b[0]) + tol \
            and min(a[1], b[1]) - tol <= c[1] <= max(a[1], b[1]) + tol

    return (on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2)
            or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4))


def is_simple_polygon(pts: np.ndarray) -> bool:
    """Check that no two non-adjacent edges of the closed loop touch."""
    n = len(pts)
    scale = float(np.ptp(pts, axis=0).max()) or 1.0
    tol = 1e-14 * scale * scale
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_cross(a, b, pts[j], pts[(j + 1) % n], tol):
                return False
    return True


@dataclass
class PolygonalMesh:
    """Vertices, counterclockwise cell loops and derived edge tables.

    Edge ``e`` joins ``edges[e, 0] < edges[e, 1]``; its fixed unit normal is the
    clockwise rotation of the unit tangent from the lower to the higher vertex.
    ``cell_edges[c][i]`` is the edge from local vertex i to i+1 and
    ``cell_edge_signs[c][i]`` is +1 when that traversal runs lower -> higher.
    """
    vertices: np.ndarray
    cells: list
    edges: np.ndarray = field(init=False)
    edge_normals: np.ndarray = field(init=False)
    edge_lengths: np.ndarray = field(init=False)
    boundary_edges: np.ndarray = field(init=False)
    boundary_vertices: np.ndarray = field(init=False)
    cell_edges: list = field(init=False)
    cell_edge_signs: list = field(init=False)
    edge_cells: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = [np.asarray(c, dtype=int) for c in self.cells]
        edge_index: dict[tuple[int, int], int] = {}
        edges, edge_cells, edge_dirs = [], [], []
        self.cell_edges, self.cell_edge_signs = [], []
        for ci, loop in enumerate(self.cells):
            ce, cs = [], []
            n = len(loop)
            for i in range(n):
                a, b = int(loop[i]), int(loop[(i + 1) % n])
                key = (min(a, b), max(a, b))
                sign = 1 if a < b else -1
                e = edge_index.get(key)
                if e is None:
                    e = len(edges)
                    edge_index[key] = e
                    edges.append(key)
                    edge_cells.append([ci, -1])
                    edge_dirs.append([sign, 0])
                else:
                    if edge_cells[e][1] != -1:
                        raise MeshError(f"edge {key} shared by more than two cells")
                    if edge_dirs[e][0] == sign:
                        raise MeshError(
                            f"inconsistent shared edge {key} between cells {edge_cells[e][0]} and {ci}")
                    edge_cells[e][1] = ci
                    edge_dirs[e][1] = sign
                ce.append(e)
                cs.append(sign)
            self.cell_edges.append(np.array(ce, dtype=int))
            self.cell_edge_signs.append(np.array(cs, dtype=int))
        self.edges = np.array(edges, dtype=int).reshape(-1, 2)
        self.edge_cells = np.array(edge_cells, dtype=int).reshape(-1, 2)
        t = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        self.edge_lengths = np.linalg.norm(t, axis=1)
        t = t / self.edge_lengths[:, None]
        self.edge_normals = np.column_stack([t[:, 1], -t[:, 0]])
        self.boundary_edges = self.edge_cells[:, 1] < 0
        bv = np.zeros(len(self.vertices), dtype=bool)
        bv[self.edges[self.boundary_edges].ravel()] = True
        self.boundary_vertices = bv

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_interior_edges(self) -> int:
        return int((~self.boundary_edges).sum())

    def cell_points(self, c: int) -> np.ndarray:
        return self.vertices[self.cells[c]]

    def cell_outward_normals(self, c: int) -> np.ndarray:
        return self.edge_normals[self.cell_edges[c]] * self.cell_edge_signs[c][:, None]

    def mesh_size(self) -> float:
        """Largest cell diameter."""
        h = 0.0
        for c in range(self.n_cells):
            p = self.cell_points(c)
            d = p[:, None, :] - p[None, :, :]
            h = max(h, float(np.sqrt((d ** 2).sum(-1)).max()))
        return h

    # -- serialization -------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({"vertices": self.vertices.tolist(),
                           "cells": [c.tolist() for c in self.cells]})

    @classmethod
    def from_json(cls, text: str) -> "PolygonalMesh":
        data = json.loads(text)
        return build_mesh(data["vertices"], data["cells"])


def build_mesh(vertices, cells) -> PolygonalMesh:
    """Validate and canonicalize a polygonal mesh.

    Loops are reoriented counterclockwise. Raises MeshError for repeated
    vertices, degenerate or self-intersecting cells, and edges whose two
    cells disagree.
    """
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != 2 or not np.all(np.isfinite(V)):
        raise MeshError("vertices must be a finite (n, 2) array")
    out = []
    for ci, loop in enumerate(cells):
        loop = [int(i) for i in loop]
        if len(loop) < 3:
            raise MeshError(f"cell {ci} has fewer than 3 vertices")
        if min(loop) < 0 or max(loop) >= len(V):
            raise MeshError(f"cell {ci} references an invalid vertex index")
        if len(set(loop)) != len(loop):
            raise MeshError(f"cell {ci} repeats a vertex index")
        pts = V[loop]
        area = polygon_area(pts)
        scale = float(np.ptp(pts, axis=0).max())
        if abs(area) <= 1e-14 * scale * scale:
            raise MeshError(f"cell {ci} has zero area")
        if not is_simple_polygon(pts):
            raise MeshError(f"cell {ci} is self-intersecting")
        if area < 0:
            loop = loop[::-1]
        out.append(loop)
    return PolygonalMesh(V, out)
