"""Triangle mesh container with optional anatomical region labels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import MeshError

REGION_NAMES = ("torso", "head", "legs", "other")
REGION_IDS = {name: i for i, name in enumerate(REGION_NAMES)}


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh: vertices in meters, faces as index triples.

    `regions`, when present, tags every vertex with one of the four
    anatomical labels in REGION_NAMES (stored as small ints).
    """

    vertices: np.ndarray
    faces: np.ndarray
    regions: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int32))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if f.size:
            degenerate = (
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            )
            if degenerate.any():
                raise MeshError(
                    f"{int(degenerate.sum())} degenerate faces (repeated indices)"
                )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.regions is not None:
            r = np.ascontiguousarray(np.asarray(self.regions, dtype=np.int8))
            if r.shape != (len(v),):
                raise MeshError("region labels must cover all vertices")
            if r.size and (r.min() < 0 or r.max() >= len(REGION_NAMES)):
                raise MeshError("region label outside the four-label vocabulary")
            object.__setattr__(self, "regions", r)
            r.flags.writeable = False
        v.flags.writeable = False
        f.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology and labels, new vertex positions."""
        return Mesh(vertices, self.faces, self.regions)

    def region_mask(self, name: str) -> np.ndarray:
        if self.regions is None:
            raise MeshError("mesh has no region labels")
        return self.regions == REGION_IDS[name]

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def is_closed(self) -> bool:
        """True when every edge is shared by exactly two faces."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


def face_normals(mesh: Mesh, normalize: bool = True) -> np.ndarray:
    """Per-face normals following right-hand winding.

    Zero-area faces get a zero normal (their contribution is skipped by
    vertex_normals).
    """
    v = mesh.vertices
    f = mesh.faces
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    if not normalize:
        return cross
    norms = np.linalg.norm(cross, axis=1)
    out = np.zeros_like(cross)
    ok = norms > 0
    out[ok] = cross[ok] / norms[ok, None]
    return out


def face_areas(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices
    f = mesh.faces
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return 0.5 * np.linalg.norm(cross, axis=1)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted unit vertex normals.

    Vertices with no valid (non-degenerate) incident face are flagged with a
    zero vector.
    """
    weighted = face_normals(mesh, normalize=False)  # cross product = 2*area*n
    acc = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], weighted)
    norms = np.linalg.norm(acc, axis=1)
    ok = norms > 0
    acc[ok] /= norms[ok, None]
    acc[~ok] = 0.0
    return acc
