import json

import numpy as np
import pytest

from vemsf.mesh import (MeshError, build_mesh, element_geometry, generate_mesh,
                        hexagon_vertices, inball_center, is_simple_polygon, polygon_area,
                        subtriangulate)
from vemsf.mesh.core import PolygonalMesh
from vemsf.mesh.geometry import boundary_distance, points_in_polygon

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def test_single_square_cell():
    m = build_mesh(SQUARE, [[0, 1, 2, 3]])
    assert (m.n_vertices, m.n_edges, m.n_interior_edges) == (4, 4, 0)
    assert m.boundary_edges.all()


def test_two_triangles():
    m = build_mesh(SQUARE, [[0, 1, 2], [0, 2, 3]])
    assert m.n_edges == 5 and m.n_interior_edges == 1


def test_build_mesh_reorients_clockwise_loops():
    m = build_mesh(SQUARE, [[3, 2, 1, 0]])
    assert polygon_area(m.cell_points(0)) > 0


@pytest.mark.parametrize("cells, msg", [
    ([[0, 1, 1, 2]], "repeats"),
    ([[0, 1, 2, 9]], "invalid"),
    ([[0, 1]], "fewer"),
])
def test_build_mesh_rejections(cells, msg):
    with pytest.raises(MeshError, match=msg):
        build_mesh(SQUARE, cells)


def test_self_intersecting_cell_rejected():
    V = np.array([[0, 0], [4, 0], [0, 2], [1, 3]], float)
    with pytest.raises(MeshError, match="self-intersecting"):
        build_mesh(V, [[0, 1, 2, 3]])


def test_zero_area_and_bad_sharing():
    V = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1, 1]], float)
    with pytest.raises(MeshError, match="zero area"):
        build_mesh(V, [[0, 1, 2]])
    # the same edge traversed in the same direction by two cells
    V = np.array([[0, 0], [1, 0], [0, 1], [0, -1]], float)
    with pytest.raises(MeshError):
        PolygonalMesh(V, [[0, 1, 2], [0, 1, 3]])


def test_self_intersection_detector():
    assert is_simple_polygon(SQUARE)
    assert not is_simple_polygon(SQUARE[[0, 2, 1, 3]])


def test_zoo_invariants(mesh_zoo):
    for name, m in mesh_zoo.items():
        counts = np.bincount(m.edge_cells[m.edge_cells >= 0].ravel(), minlength=m.n_cells)
        assert counts.sum() == 2 * m.n_edges - m.boundary_edges.sum(), name
        for c in range(m.n_cells):
            assert polygon_area(m.cell_points(c)) > 0
        # interior edges shared by exactly two cells, boundary edges by one
        assert np.all((m.edge_cells[:, 1] >= 0) == ~m.boundary_edges)
        assert np.allclose(np.linalg.norm(m.edge_normals, axis=1), 1.0)


def test_unit_square_families_cover_the_square(mesh_zoo):
    for name in ("convex-poly", "nonconvex-poly", "uniform-quads", "anisotropic-quads"):
        m = mesh_zoo[name]
        total = sum(polygon_area(m.cell_points(c)) for c in range(m.n_cells))
        assert abs(total - 1.0) < 1e-12, name
        bv = m.vertices[m.boundary_vertices]
        on = np.isclose(bv, 0).any(1) | np.isclose(bv, 1).any(1)
        assert on.all(), name


def test_generator_examples():
    V = generate_mesh("hexagon-Hi", i=1).vertices
    a = np.sqrt(3) / 4
    expect = [[1, 0], [0.5, a], [-0.5, a], [-1, 0], [-0.5, -a], [0.5, -a]]
    assert np.allclose(V, expect)
    m = generate_mesh("square-hanging-nodes")
    assert m.n_cells == 1 and m.n_vertices == 6
    assert polygon_area(m.cell_points(0)) == pytest.approx(1.0)
    m = generate_mesh("anisotropic-quads", hx=0.2, hy=0.5)
    assert m.n_cells == 10
    assert np.allclose(np.ptp(m.cell_points(0), axis=0), [0.2, 0.5])


def test_generator_rejections():
    with pytest.raises(MeshError):
        generate_mesh("triangles")
    with pytest.raises(MeshError):
        generate_mesh("anisotropic-quads", hx=0.3, hy=0.5)
    with pytest.raises(MeshError):
        generate_mesh("uniform-quads", n=2, i=3)


def test_generators_are_deterministic():
    a = generate_mesh("convex-poly", n=4, seed=3)
    b = generate_mesh("convex-poly", n=4, seed=3)
    assert np.array_equal(a.vertices, b.vertices)
    assert all(np.array_equal(x, y) for x, y in zip(a.cells, b.cells))


def test_convex_poly_cells_are_convex():
    m = generate_mesh("convex-poly", n=6)
    for c in range(m.n_cells):
        p = m.cell_points(c)
        d1 = np.roll(p, -1, 0) - p
        d2 = np.roll(p, -2, 0) - np.roll(p, -1, 0)
        assert np.all(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] > -1e-12)


def test_mesh_json_roundtrip():
    m = generate_mesh("nonconvex-poly", n=2)
    back = type(m).from_json(m.to_json())
    assert np.array_equal(back.vertices, m.vertices)
    assert json.loads(m.to_json())["cells"][0] == [int(i) for i in m.cells[0]]


def test_geometry_square_and_hexagon():
    g = element_geometry(SQUARE)
    assert g.diameter == pytest.approx(np.sqrt(2))
    assert g.area == pytest.approx(1.0)
    assert np.allclose(g.inball_center, [0.5, 0.5], atol=1e-3)
    assert g.inradius == pytest.approx(0.5, abs=1e-3)
    assert element_geometry(hexagon_vertices(0)).area == pytest.approx(3 * np.sqrt(3) / 2)
    with pytest.raises(MeshError):
        element_geometry(np.array([[0, 0], [1, 0], [2, 0]], float))


def test_hexagon_chunkiness_increases():
    ch = [element_geometry(hexagon_vertices(i)).chunkiness for i in range(13)]
    assert np.all(np.diff(ch) > 0)


def test_inball_center_strictly_inside():
    for poly in (SQUARE, hexagon_vertices(5), generate_mesh("nonconvex-poly", n=1).cell_points(0)):
        c, r = inball_center(poly)
        assert points_in_polygon(c[None], poly)[0]
        assert r > 0 and abs(boundary_distance(c[None], poly)[0] - r) < 1e-12


def test_subtriangulation_fan_hexagon():
    st = subtriangulate(hexagon_vertices(0), "centroid-fan")
    assert st.n_triangles == 6
    assert len(st.interior_edges) == 6 and len(st.interior_vertices) == 1
    assert st.areas().sum() == pytest.approx(3 * np.sqrt(3) / 2)
    for f in range(6):
        assert len(st.sub_edges_of(f)) == 1


def test_ear_clip_square():
    st = subtriangulate(SQUARE, "ear-clip")
    assert st.n_triangles == 2 and np.all(st.areas() > 0)


def test_hanging_nodes_fan_uses_hanging_vertices(hanging_square):
    st = subtriangulate(hanging_square, "inball-fan")
    assert st.n_triangles == 6
    assert st.min_angle() > np.deg2rad(15)


def test_nonstar_fan_falls_back_to_ear_clip():
    L = np.array([[0, 0], [2, 0], [2, 0.2], [0.2, 0.2], [0.2, 2]], float)
    st = subtriangulate(L, "centroid-fan")
    assert st.strategy == "ear-clip"
    assert np.all(st.areas() > 0) and st.areas().sum() == pytest.approx(polygon_area(L))


def test_nonconvex_generator_cells_triangulate():
    m = generate_mesh("nonconvex-poly", n=3)
    for c in range(m.n_cells):
        p = m.cell_points(c)
        for strategy in ("inball-fan", "centroid-fan", "ear-clip"):
            st = subtriangulate(p, strategy)
            assert np.all(st.areas() > 0)
            assert st.areas().sum() == pytest.approx(polygon_area(p))


def test_subtriangulation_edge_tables(mesh_zoo):
    for m in mesh_zoo.values():
        for c in range(m.n_cells):
            p = m.cell_points(c)
            st = subtriangulate(p)
            # boundary sub-edges tile each polygon edge
            for f in range(len(p)):
                L = np.linalg.norm(p[(f + 1) % len(p)] - p[f])
                assert st.edge_lengths[st.sub_edges_of(f)].sum() == pytest.approx(L)
            # the sign makes the fixed normal outward
            for e in st.boundary_edges:
                f = st.edge_parent[e]
                t = p[(f + 1) % len(p)] - p[f]
                out = np.array([t[1], -t[0]]) / np.linalg.norm(t)
                assert np.allclose(st.edge_sign[e] * st.edge_normals[e], out)


def test_subtriangulate_rejects_unknown_strategy():
    with pytest.raises(ValueError):
        subtriangulate(SQUARE, "delaunay")
    with pytest.raises(MeshError):
        subtriangulate(SQUARE[::-1], "ear-clip")
