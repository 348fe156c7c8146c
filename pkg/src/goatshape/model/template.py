"""Template definition: rest mesh, skeleton, skinning weights, regressor,
landmark and measurement keypoint tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from ..errors import ConfigError
from ..geometry.mesh import Mesh
from .kinematics import validate_tree

WEIGHT_ROW_TOL = 1e-6

# rule kind per body dimension: keypoint-pair distance, height above the
# ground plane, or ellipse-fit girth around a keypoint ring
MEASUREMENT_RULES = {
    "BL": "pairwise",
    "BH": "height",
    "HH": "height",
    "CW": "pairwise",
    "HW": "pairwise",
    "CG": "girth",
}


@dataclass(frozen=True)
class Template:
    """Skinned model definition. All arrays are immutable after validation."""

    rest_mesh: Mesh
    joints: np.ndarray  # (M, 3) rest joint positions
    parents: np.ndarray  # (M,) parent indices, root = -1
    joint_names: tuple
    weights: np.ndarray  # (N, M) skinning weights
    joint_regressor: np.ndarray  # (M, N), rows sum to 1
    landmarks: Dict[str, int]  # 32 named template vertex ids
    measurement_keypoints: Dict[str, List[int]]  # dimension -> vertex ids

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=float)
        parents = np.asarray(self.parents, dtype=int)
        weights = np.asarray(self.weights, dtype=float)
        regressor = np.asarray(self.joint_regressor, dtype=float)
        n = self.rest_mesh.n_vertices
        m = len(joints)
        if joints.shape != (m, 3):
            raise ConfigError("joints must be (M, 3)")
        if parents.shape != (m,):
            raise ConfigError("parents must be (M,)")
        if len(self.joint_names) != m:
            raise ConfigError("joint_names must match joint count")
        validate_tree(parents)
        if weights.shape != (n, m):
            raise ConfigError(f"weights must be ({n}, {m}), got {weights.shape}")
        if weights.min() < 0:
            raise ConfigError("skinning weights must be non-negative")
        rs = weights.sum(axis=1)
        if np.abs(rs - 1.0).max() > WEIGHT_ROW_TOL:
            raise ConfigError("skinning weight rows must sum to 1")
        if regressor.shape != (m, n):
            raise ConfigError(f"joint_regressor must be ({m}, {n})")
        if regressor.min() < -1e-12:
            raise ConfigError("joint regressor rows must be non-negative")
        if np.abs(regressor.sum(axis=1) - 1.0).max() > WEIGHT_ROW_TOL:
            raise ConfigError("joint regressor rows must sum to 1")
        if len(self.landmarks) != 32:
            raise ConfigError(f"expected 32 landmarks, got {len(self.landmarks)}")
        for name, vid in self.landmarks.items():
            if not 0 <= int(vid) < n:
                raise ConfigError(f"landmark {name!r} has invalid vertex id {vid}")
        for dim, ids in self.measurement_keypoints.items():
            if dim not in MEASUREMENT_RULES:
                raise ConfigError(f"unknown measurement dimension {dim!r}")
            for vid in ids:
                if not 0 <= int(vid) < n:
                    raise ConfigError(f"measurement keypoint id {vid} out of range")
        missing = set(MEASUREMENT_RULES) - set(self.measurement_keypoints)
        if missing:
            raise ConfigError(f"missing measurement keypoints for {sorted(missing)}")
        if len(self.measurement_keypoints.get("CG", [])) < 5:
            raise ConfigError("chest girth requires at least 5 keypoints")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "joint_regressor", regressor)
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        for a in (joints, parents, weights, regressor):
            a.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return self.rest_mesh.n_vertices

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parents < 0)[0])

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown joint name {name!r}") from None

    def landmark_positions(self, vertices: np.ndarray | None = None) -> np.ndarray:
        """Landmark 3D positions on the given (default: rest) vertices."""
        v = self.rest_mesh.vertices if vertices is None else vertices
        ids = np.fromiter(self.landmarks.values(), dtype=int)
        return v[ids]

    @property
    def landmark_names(self) -> list:
        return list(self.landmarks.keys())

    @property
    def landmark_ids(self) -> np.ndarray:
        return np.fromiter(self.landmarks.values(), dtype=int)
