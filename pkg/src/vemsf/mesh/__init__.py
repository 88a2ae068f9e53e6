"""Polygonal meshes, cell geometry, generators and cell sub-triangulations."""
from .core import MeshError, PolygonalMesh, build_mesh, is_simple_polygon, polygon_area
from .geometry import ElementGeometry, element_geometry, inball_center, polygon_centroid
from .generate import FAMILIES, generate_mesh, hexagon_vertices
from .subtri import STRATEGIES, SubTriangulation, subtriangulate

__all__ = [
    "MeshError", "PolygonalMesh", "build_mesh", "is_simple_polygon", "polygon_area",
    "ElementGeometry", "element_geometry", "inball_center", "polygon_centroid",
    "FAMILIES", "generate_mesh", "hexagon_vertices",
    "STRATEGIES", "SubTriangulation", "subtriangulate",
]
