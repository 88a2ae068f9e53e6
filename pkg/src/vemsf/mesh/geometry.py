"""Per-cell geometric quantities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MeshError, polygon_area


@dataclass(frozen=True)
class ElementGeometry:
    diameter: float
    area: float
    centroid: np.ndarray
    inball_center: np.ndarray
    inradius: float
    edge_lengths: np.ndarray
    outward_normals: np.ndarray

    @property
    def chunkiness(self) -> float:
        return self.diameter / (2.0 * self.inradius)


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd ray test, vectorized over points."""
    x, y = pts[:, 0:1], pts[:, 1:2]
    a = poly
    b = np.roll(poly, -1, axis=0)
    cond = (a[:, 1] > y) != (b[:, 1] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
    hits = cond & (x < xint)
    return (hits.sum(axis=1) % 2) == 1


def boundary_distance(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to the polygon boundary, negative outside."""
    a = poly[None, :, :]
    d = np.roll(poly, -1, axis=0)[None, :, :] - a
    p = pts[:, None, :]
    t = np.clip(((p - a) * d).sum(-1) / (d ** 2).sum(-1), 0.0, 1.0)
    dist = np.linalg.norm(p - a - t[..., None] * d, axis=-1).min(axis=1)
    return np.where(points_in_polygon(pts, poly), dist, -dist)


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = 0.5 * cr.sum()
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * a)


def inball_center(poly: np.ndarray, grid: int = 25, sweeps: int = 22) -> tuple[np.ndarray, float]:
    """Approximate center and radius of the largest inscribed disc.

    Grid search over the bounding box followed by repeated local grid
    refinement. A tiny penalty toward the centroid makes the choice unique
    when the maximizer is not (thin rectangles, collapsing hexagons).
    """
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    ext = hi - lo
    h = float(np.linalg.norm(ext))
    c0 = polygon_centroid(poly)

    def score(pts):
        d = boundary_distance(pts, poly)
        return d - 1e-6 * (((pts - c0) / ext) ** 2).sum(-1) * h

    s = np.linspace(0.0, 1.0, grid)
    X, Y = np.meshgrid(lo[0] + s * ext[0], lo[1] + s * ext[1], indexing="ij")
    cand = np.column_stack([X.ravel(), Y.ravel()])
    cand = np.vstack([cand, c0])
    sc = score(cand)
    best = cand[np.argmax(sc)]
    half = ext / (grid - 1)
    for _ in range(sweeps):
        s = np.linspace(-1.0, 1.0, 7)
        X, Y = np.meshgrid(best[0] + s * half[0], best[1] + s * half[1], indexing="ij")
        cand = np.column_stack([X.ravel(), Y.ravel()])
        sc = score(cand)
        best = cand[np.argmax(sc)]
        half = half * 0.5
    r = float(boundary_distance(best[None], poly)[0])
    return best, r


def element_geometry(poly) -> ElementGeometry:
    """Diameter, area, centroid, approximate inball and edge data of one cell."""
    poly = np.asarray(poly, dtype=float)
    area = polygon_area(poly)
    if not area > 0:
        raise MeshError("cell has non-positive area")
    d = poly[:, None, :] - poly[None, :, :]
    diam = float(np.sqrt((d ** 2).sum(-1)).max())
    t = np.roll(poly, -1, axis=0) - poly
    lengths = np.linalg.norm(t, axis=1)
    normals = np.column_stack([t[:, 1], -t[:, 0]]) / lengths[:, None]
    xk, r = inball_center(poly)
    if r <= 0:
        raise MeshError("inball search failed to find an interior point")
    return ElementGeometry(diam, area, polygon_centroid(poly), xk, r, lengths, normals)
