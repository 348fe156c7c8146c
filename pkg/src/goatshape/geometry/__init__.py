"""Mesh/geometry kernel: meshes, rotations, distances, subdivision, filtering."""

from .mesh import Mesh, REGION_NAMES, REGION_IDS, face_normals, face_areas, vertex_normals
from .rotations import (
    AxisAngle,
    RigidTransform,
    canonicalize_axis_angle,
    rodrigues,
    rodrigues_jacobian,
    rotation_to_axis_angle,
)
from .distance import (
    chamfer_distance,
    closest_surface_points,
    mesh_to_scan_distance,
    radius_filter,
    SurfacePoints,
)
from .subdivision import loop_subdivide
from .meshio import load_mesh, save_mesh, load_obj, save_obj, load_ply, save_ply

__all__ = [
    "Mesh",
    "REGION_NAMES",
    "REGION_IDS",
    "AxisAngle",
    "RigidTransform",
    "face_normals",
    "face_areas",
    "vertex_normals",
    "canonicalize_axis_angle",
    "rodrigues",
    "rodrigues_jacobian",
    "rotation_to_axis_angle",
    "chamfer_distance",
    "closest_surface_points",
    "mesh_to_scan_distance",
    "radius_filter",
    "SurfacePoints",
    "loop_subdivide",
    "load_mesh",
    "save_mesh",
    "load_obj",
    "save_obj",
    "load_ply",
    "save_ply",
]
