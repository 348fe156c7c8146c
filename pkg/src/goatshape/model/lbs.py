"""Linear blend skinning: forward mesh generation and exact inverse."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigError, FitError
from ..geometry.mesh import Mesh
from .kinematics import Pose, skinning_transforms

_COND_LIMIT = 1e8


@dataclass(frozen=True)
class LbsResult:
    """Forward-skinning byproducts reused by gradients and inverse mapping."""

    mesh: Mesh
    shaped_vertices: np.ndarray  # rest-pose vertices after shape displacement
    rest_joints: np.ndarray  # joints regressed from the shaped vertices
    joint_transforms: np.ndarray  # relative skinning transforms A_j (M,4,4)
    blended: np.ndarray  # per-vertex blended affine (N,3,4)


def regress_joints(template, vertices: np.ndarray) -> np.ndarray:
    """Joint positions as regressor-weighted sums of mesh vertices."""
    vertices = np.asarray(vertices, dtype=float)
    if vertices.shape[0] != template.n_vertices:
        raise ConfigError(
            f"vertex count {vertices.shape[0]} != regressor columns "
            f"{template.n_vertices}"
        )
    return template.joint_regressor @ vertices


def shaped_rest_vertices(template, shape=None, space=None) -> np.ndarray:
    """Template vertices plus the shape-space displacement for `shape`."""
    v = template.rest_mesh.vertices
    if shape is None or space is None:
        return v.copy()
    disp = space.reconstruct(shape).reshape(-1, 3)
    if disp.shape[0] != v.shape[0]:
        raise ConfigError(
            f"shape basis covers {disp.shape[0]} vertices, template has {v.shape[0]}"
        )
    return v + disp


def lbs_forward_full(template, pose: Pose, shape=None, space=None) -> LbsResult:
    v_s = shaped_rest_vertices(template, shape, space)
    rest_joints = regress_joints(template, v_s)
    a = skinning_transforms(rest_joints, template.parents, pose)
    blended = np.einsum(
        "vj,jab->vab", template.weights, a[:, :3, :]
    )  # (N,3,4)
    posed = np.einsum("vab,vb->va", blended[:, :, :3], v_s) + blended[:, :, 3]
    mesh = template.rest_mesh.with_vertices(posed)
    return LbsResult(mesh, v_s, rest_joints, a, blended)


def lbs_forward(template, pose: Pose, shape=None, space=None) -> Mesh:
    """Pose the template (optionally shape-displaced) with blend skinning."""
    return lbs_forward_full(template, pose, shape, space).mesh


def lbs_inverse(
    template,
    posed: Mesh | np.ndarray,
    pose: Pose,
    shape=None,
    space=None,
) -> np.ndarray:
    """Undo blend skinning: recover rest-pose vertices from a posed mesh.

    Inverts each vertex's blended affine directly, so
    lbs_inverse(lbs_forward(x)) == x up to floating-point error. Raises
    FitError naming the first vertex whose blended transform is numerically
    singular.
    """
    posed_v = posed.vertices if isinstance(posed, Mesh) else np.asarray(posed, float)
    if posed_v.shape[0] != template.n_vertices:
        raise ConfigError("posed mesh vertex count does not match template")
    v_s = shaped_rest_vertices(template, shape, space)
    rest_joints = regress_joints(template, v_s)
    a = skinning_transforms(rest_joints, template.parents, pose)
    blended = np.einsum("vj,jab->vab", template.weights, a[:, :3, :])
    rot = blended[:, :, :3]
    det = np.linalg.det(rot)
    norms = np.linalg.norm(rot, axis=(1, 2))
    bad = np.abs(det) < (norms**3) / _COND_LIMIT + 1e-300
    if bad.any():
        idx = int(np.argmax(bad))
        raise FitError(
            f"blended skinning transform is numerically singular at vertex {idx}",
            {"vertex": idx, "det": float(det[idx])},
        )
    rot_inv = np.linalg.inv(rot)
    return np.einsum("vab,vb->va", rot_inv, posed_v - blended[:, :, 3])


def lbs_beta_gradient(space, blended: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Approximate dL/dbeta for per-vertex loss gradient g (N,3).

    Uses the fixed-skeleton linearization: displacement directions are carried
    through each vertex's blended rotation, ignoring the secondary motion of
    regressed joints under shape change.
    """
    h = np.einsum("vba,vb->va", blended[:, :, :3], g)  # rot^T @ g per vertex
    return space.project_gradient(h.ravel())
