"""Stabilization-free virtual element methods on polygonal meshes."""
__version__ = "0.1.0"
