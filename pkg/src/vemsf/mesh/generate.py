"""Mesh generators for the experiment families."""
from __future__ import annotations

import numpy as np
from scipy.spatial import Voronoi

from .core import MeshError, PolygonalMesh, build_mesh

FAMILIES = ("convex-poly", "nonconvex-poly", "hexagon-Hi", "square-hanging-nodes",
            "anisotropic-quads", "quasi-regular-hexagon", "uniform-quads")


def _quads(nx: int, ny: int) -> PolygonalMesh:
    x = np.linspace(0.0, 1.0, nx + 1)
    y = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    V = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    cells = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
             for j in range(ny) for i in range(nx)]
    return build_mesh(V, cells)


def hexagon_vertices(i: int) -> np.ndarray:
    """Hexagon H_i with half-height a_i = sqrt(3) / 2^(i+1)."""
    a = np.sqrt(3.0) / 2.0 ** (i + 1)
    return np.array([[1.0, 0.0], [0.5, a], [-0.5, a], [-1.0, 0.0], [-0.5, -a], [0.5, -a]])


def _clip_snap(v: np.ndarray, tol: float) -> np.ndarray:
    v = v.copy()
    for d in range(2):
        v[np.abs(v[:, d]) < tol, d] = 0.0
        v[np.abs(v[:, d] - 1.0) < tol, d] = 1.0
    return v


def _voronoi_cells(seeds: np.ndarray):
    """Voronoi cells of seeds restricted to the unit square by mirroring."""
    mirrors = [seeds]
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            if sx == 0 and sy == 0:
                continue
            m = seeds.copy()
            if sx:
                m[:, 0] = (sx + 1) - m[:, 0] if sx == 1 else -m[:, 0]
            if sy:
                m[:, 1] = (sy + 1) - m[:, 1] if sy == 1 else -m[:, 1]
            mirrors.append(m)
    vor = Voronoi(np.vstack(mirrors))
    cells = []
    for p in range(len(seeds)):
        region = vor.regions[vor.point_region[p]]
        if -1 in region or not region:
            raise MeshError("unbounded Voronoi region inside the square")
        cells.append(list(region))
    return vor.vertices, cells


def _lloyd(seeds: np.ndarray, iters: int) -> np.ndarray:
    from .geometry import polygon_centroid
    for _ in range(iters):
        V, cells = _voronoi_cells(seeds)
        V = np.clip(V, 0.0, 1.0)
        new = np.array([polygon_centroid(_ccw(V[c])) for c in cells])
        seeds = new
    return seeds


def _ccw(pts):
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    return pts[np.argsort(ang)]


def _assemble_polys(verts: np.ndarray, cells, h: float) -> PolygonalMesh:
    """Merge near-coincident vertices and build a mesh from Voronoi output."""
    verts = _clip_snap(verts, 1e-10)
    key = np.round(verts / (1e-9 * h)).astype(np.int64)
    _, uniq, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    V = verts[uniq]
    loops = []
    for c in cells:
        ids = []
        for i in c:
            g = int(inv[i])
            if g not in ids:
                ids.append(g)
        pts = V[ids]
        ctr = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - ctr[1], pts[:, 0] - ctr[0]))
        loops.append([ids[o] for o in order])
    used = sorted({i for l in loops for i in l})
    remap = {old: new for new, old in enumerate(used)}
    return build_mesh(V[used], [[remap[i] for i in l] for l in loops])


def _collapse_short_edges(mesh: PolygonalMesh, min_len: float) -> PolygonalMesh:
    """Merge the endpoints of edges shorter than ``min_len``.

    Boundary vertices keep their position; corners are never moved.
    """
    V = mesh.vertices.copy()
    parent = np.arange(len(V))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def is_corner(p):
        return (p[0] in (0.0, 1.0)) and (p[1] in (0.0, 1.0))

    def on_bd(p):
        return p[0] in (0.0, 1.0) or p[1] in (0.0, 1.0)

    order = np.argsort(mesh.edge_lengths)
    for e in order:
        if mesh.edge_lengths[e] >= min_len:
            break
        a, b = (find(int(i)) for i in mesh.edges[e])
        if a == b:
            continue
        pa, pb = V[a], V[b]
        if is_corner(pa) and is_corner(pb):
            continue
        if is_corner(pa) or (on_bd(pa) and not on_bd(pb)):
            keep, drop = a, b
        elif is_corner(pb) or (on_bd(pb) and not on_bd(pa)):
            keep, drop = b, a
        elif on_bd(pa) and on_bd(pb):
            # both on the boundary: only merge along the same side
            if not (pa[0] == pb[0] or pa[1] == pb[1]):
                continue
            keep, drop = a, b
            V[keep] = 0.5 * (pa + pb)
        else:
            keep, drop = a, b
            V[keep] = 0.5 * (pa + pb)
        parent[drop] = keep
    loops = []
    for c in mesh.cells:
        ids = []
        for i in c:
            g = find(int(i))
            if not ids or ids[-1] != g:
                ids.append(g)
        if ids[0] == ids[-1]:
            ids.pop()
        loops.append(ids)
    used = sorted({i for l in loops for i in l})
    remap = {old: new for new, old in enumerate(used)}
    return build_mesh(V[used], [[remap[i] for i in l] for l in loops])


def convex_poly_mesh(n: int, seed: int = 0, lloyd: int = 30) -> PolygonalMesh:
    """Centroidal Voronoi mesh of the unit square with about n*n cells."""
    rng = np.random.default_rng(seed)
    h = 1.0 / n
    # perturbed triangular lattice of seeds
    rows = max(2, int(round(n * 2.0 / np.sqrt(3.0))))
    ys = (np.arange(rows) + 0.5) / rows
    pts = []
    for r, y in enumerate(ys):
        off = 0.5 if r % 2 else 0.0
        xs = (np.arange(n) + 0.25 + 0.5 * off) / n
        pts.extend([(x, y) for x in xs])
    seeds = np.array(pts)
    seeds += rng.uniform(-0.15, 0.15, seeds.shape) * h
    seeds = np.clip(seeds, 0.05 * h, 1 - 0.05 * h)
    seeds = _lloyd(seeds, lloyd)
    V, cells = _voronoi_cells(seeds)
    mesh = _assemble_polys(V, cells, h)
    return _collapse_short_edges(mesh, 0.05 * h)


def nonconvex_poly_mesh(n: int, shift: float = 0.3) -> PolygonalMesh:
    """Chevron hexagons: each grid cell's bottom and top midpoints are lifted
    by ``shift * h``, making the bottom vertex reflex. The midpoints on y=0 and
    y=1 stay on the boundary."""
    h = 1.0 / n
    xs = np.linspace(0.0, 1.0, n + 1)
    ys = np.linspace(0.0, 1.0, n + 1)
    V = []
    grid = {}
    mid = {}
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            grid[i, j] = len(V)
            V.append((x, y))
    for i in range(n):
        xm = 0.5 * (xs[i] + xs[i + 1])
        for j, y in enumerate(ys):
            d = 0.0 if j in (0, n) else shift * h
            mid[i, j] = len(V)
            V.append((xm, y + d))
    cells = []
    for j in range(n):
        for i in range(n):
            cells.append([grid[i, j], mid[i, j], grid[i + 1, j],
                          grid[i + 1, j + 1], mid[i, j + 1], grid[i, j + 1]])
    return build_mesh(np.array(V), cells)


def generate_mesh(family: str, **params) -> PolygonalMesh:
    """Build a mesh of the requested family.

    Parameters by family: ``n`` (cells per side) for convex-poly,
    nonconvex-poly and uniform-quads; ``hx``, ``hy`` for anisotropic-quads;
    ``i`` for hexagon-Hi; ``seed`` and ``amplitude`` for quasi-regular-hexagon.
    """
    if family not in FAMILIES:
        raise MeshError(f"unsupported mesh family {family!r}")

    def need(*names):
        allowed = set(names) | {"seed", "lloyd", "shift", "amplitude"}
        extra = set(params) - allowed
        if extra:
            raise MeshError(f"unsupported parameters {sorted(extra)} for {family}")

    if family == "uniform-quads":
        need("n")
        n = int(params.get("n", 4))
        if n < 1:
            raise MeshError("n must be positive")
        return _quads(n, n)
    if family == "anisotropic-quads":
        need("hx", "hy")
        hx, hy = float(params.get("hx", 0.2)), float(params.get("hy", 0.2))
        nx, ny = 1.0 / hx, 1.0 / hy
        if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9 or nx < 1 or ny < 1:
            raise MeshError("hx and hy must divide 1")
        return _quads(int(round(nx)), int(round(ny)))
    if family == "convex-poly":
        need("n")
        n = int(params.get("n", 4))
        if n < 2:
            raise MeshError("n must be at least 2")
        return convex_poly_mesh(n, int(params.get("seed", 0)), int(params.get("lloyd", 30)))
    if family == "nonconvex-poly":
        need("n")
        n = int(params.get("n", 4))
        if n < 1:
            raise MeshError("n must be positive")
        return nonconvex_poly_mesh(n, float(params.get("shift", 0.3)))
    if family == "hexagon-Hi":
        need("i")
        i = int(params.get("i", 0))
        if i < 0:
            raise MeshError("i must be non-negative")
        return build_mesh(hexagon_vertices(i), [list(range(6))])
    if family == "square-hanging-nodes":
        need()
        V = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 1.0], [0.5, 1.0], [0.0, 1.0]])
        return build_mesh(V, [list(range(6))])
    # quasi-regular-hexagon
    need()
    rng = np.random.default_rng(int(params.get("seed", 0)))
    amp = float(params.get("amplitude", 0.05))
    V = hexagon_vertices(0) + rng.uniform(-amp, amp, (6, 2))
    return build_mesh(V, [list(range(6))])
