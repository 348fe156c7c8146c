"""Chamfer / mesh-to-scan distances, surface queries, and radius filtering.

All distances are returned in millimeters (coordinates are meters); the
`brute_force` switches select the O(n^2) reference path used by the test
oracles instead of the tree-accelerated one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import MeshError
from ._kernels import closest_points_brute, closest_points_candidates
from .mesh import Mesh

M_TO_MM = 1000.0


def chamfer_distance(a: np.ndarray, b: np.ndarray, brute_force: bool = False) -> float:
    """Symmetric chamfer distance between two point sets, in mm.

    Mean nearest-neighbor distance in each direction, averaged over the two
    directions.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise MeshError("chamfer distance requires non-empty point sets")
    if brute_force:
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
        fwd = d.min(axis=1).mean()
        bwd = d.min(axis=0).mean()
    else:
        fwd = cKDTree(b).query(a)[0].mean()
        bwd = cKDTree(a).query(b)[0].mean()
    return 0.5 * (fwd + bwd) * M_TO_MM


@dataclass(frozen=True)
class SurfacePoints:
    """Closest-point query result: positions, triangle ids, and barycentrics."""

    points: np.ndarray
    triangles: np.ndarray
    distances: np.ndarray  # meters
    barycentric: np.ndarray


class SurfaceIndex:
    """Reusable acceleration structure for exact closest-point queries."""

    def __init__(self, mesh: Mesh):
        if mesh.n_faces == 0:
            raise MeshError("SurfaceIndex requires a mesh with faces")
        self.mesh = mesh
        v, f = mesh.vertices, mesh.faces
        centroids = v[f].mean(axis=1)
        tri_radius = np.linalg.norm(v[f] - centroids[:, None, :], axis=2).max(axis=1)
        self.r_max = float(tri_radius.max())
        self.vtree = cKDTree(v)
        self.ctree = cKDTree(centroids)

    def query(self, points: np.ndarray) -> SurfacePoints:
        pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
        v, f = self.mesh.vertices, self.mesh.faces
        upper = self.vtree.query(pts)[0]
        lists = self.ctree.query_ball_point(pts, upper + self.r_max + 1e-12)
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(pts))
        offsets = np.zeros(len(pts) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        cand = np.empty(offsets[-1], dtype=np.int64)
        for i, l in enumerate(lists):
            l.sort()
            cand[offsets[i] : offsets[i + 1]] = l
        cp, tri, d2 = closest_points_candidates(pts, v, f, cand, offsets)
        bary = _barycentric(cp, v, f, tri)
        return SurfacePoints(cp, tri, np.sqrt(np.maximum(d2, 0.0)), bary)


def closest_surface_points(
    points: np.ndarray, mesh: Mesh, brute_force: bool = False
) -> SurfacePoints:
    """Exact closest point on the mesh surface for each query point.

    Ties between equidistant triangles resolve to the lowest triangle index.
    The accelerated path prunes with a vertex-distance upper bound plus the
    largest triangle radius, so it returns exactly the brute-force result.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    if mesh.n_faces == 0 or len(pts) == 0:
        raise MeshError("closest_surface_points requires a non-empty mesh and points")
    if brute_force or mesh.n_faces < 64:
        v, f = mesh.vertices, mesh.faces
        cp, tri, d2 = closest_points_brute(pts, v, f)
        bary = _barycentric(cp, v, f, tri)
        return SurfacePoints(cp, tri, np.sqrt(np.maximum(d2, 0.0)), bary)
    return SurfaceIndex(mesh).query(pts)


def _barycentric(points, verts, faces, tri_ids):
    a = verts[faces[tri_ids, 0]]
    ab = verts[faces[tri_ids, 1]] - a
    ac = verts[faces[tri_ids, 2]] - a
    ap = points - a
    d00 = np.einsum("ij,ij->i", ab, ab)
    d01 = np.einsum("ij,ij->i", ab, ac)
    d11 = np.einsum("ij,ij->i", ac, ac)
    d20 = np.einsum("ij,ij->i", ap, ab)
    d21 = np.einsum("ij,ij->i", ap, ac)
    denom = d00 * d11 - d01 * d01
    denom = np.where(np.abs(denom) < 1e-30, 1.0, denom)
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    v = np.clip(v, 0.0, 1.0)
    w = np.clip(w, 0.0, 1.0 - v)
    return np.stack([1.0 - v - w, v, w], axis=1)


def mesh_to_scan_distance(mesh: Mesh, scan: Mesh, brute_force: bool = False) -> float:
    """Mean distance from mesh vertices to the scan surface, in mm."""
    if mesh.n_vertices == 0 or scan.n_faces == 0:
        raise MeshError("mesh_to_scan_distance requires non-empty meshes")
    res = closest_surface_points(mesh.vertices, scan, brute_force=brute_force)
    return float(res.distances.mean()) * M_TO_MM


def radius_filter(
    points: np.ndarray,
    radius: float,
    min_neighbors: int,
    brute_force: bool = False,
) -> np.ndarray:
    """Keep points with at least `min_neighbors` other points within `radius`."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if radius <= 0:
        raise MeshError("radius must be positive")
    if min_neighbors < 1:
        raise MeshError("min_neighbors must be >= 1")
    if len(pts) == 0:
        return pts.copy()
    if brute_force:
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        counts = (d <= radius).sum(axis=1) - 1  # exclude self
    else:
        tree = cKDTree(pts)
        counts = np.array(
            [len(idx) - 1 for idx in tree.query_ball_point(pts, radius)]
        )
    return pts[counts >= min_neighbors].copy()
