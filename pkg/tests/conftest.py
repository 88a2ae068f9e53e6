import numpy as np
import pytest

from vemsf.mesh import generate_mesh, hexagon_vertices


def zoo():
    """Small meshes of every generator family."""
    return {
        "convex-poly": generate_mesh("convex-poly", n=3),
        "nonconvex-poly": generate_mesh("nonconvex-poly", n=2),
        "uniform-quads": generate_mesh("uniform-quads", n=2),
        "anisotropic-quads": generate_mesh("anisotropic-quads", hx=0.5, hy=0.25),
        "hexagon-Hi": generate_mesh("hexagon-Hi", i=2),
        "square-hanging-nodes": generate_mesh("square-hanging-nodes"),
        "quasi-regular-hexagon": generate_mesh("quasi-regular-hexagon"),
    }


@pytest.fixture(scope="session")
def mesh_zoo():
    return zoo()


@pytest.fixture(scope="session")
def hexagon():
    return hexagon_vertices(0)


@pytest.fixture(scope="session")
def hanging_square():
    return generate_mesh("square-hanging-nodes").cell_points(0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
