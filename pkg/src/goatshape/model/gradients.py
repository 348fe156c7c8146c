"""Analytic pullback of per-vertex loss gradients onto pose parameters.

For a loss L whose derivative w.r.t. posed points is g_v, the chain rule
through blend skinning reduces to per-joint 4x4 accumulators contracted with
the kinematic-chain derivatives held by PoseJacobian.
"""

from __future__ import annotations

import numpy as np

from .kinematics import PoseJacobian


def lbs_point_jacobian(
    pose_jac: PoseJacobian,
    weight_rows: np.ndarray,
    rest_points: np.ndarray,
) -> np.ndarray:
    """Full Jacobian of posed points w.r.t. the pose vector: (n, 3, P).

    Columns follow Pose.as_vector() ordering. Root translation columns are
    the identity for every point (weights sum to 1); rotation columns come
    from the chain-rule matrices cached in PoseJacobian.
    """
    w = np.asarray(weight_rows, dtype=float)
    pts = np.asarray(rest_points, dtype=float)
    n = len(pts)
    m = pose_jac.m
    p_dim = 6 + 3 * (m - 1)
    out = np.zeros((n, 3, p_dim))
    out[:, 0, 3] = 1.0
    out[:, 1, 4] = 1.0
    out[:, 2, 5] = 1.0
    # y[k] = sum over descendants j of w_vj * A_j @ [p;1] (homogeneous),
    # built children-first so each subtree is accumulated once
    y = np.zeros((m, n, 4))
    for j in pose_jac.topo_order[::-1]:
        if np.any(w[:, j]):
            g = pose_jac.g[j]
            aj = (pts - pose_jac.rest_joints[j]) @ g[:3, :3].T + g[:3, 3]
            y[j, :, :3] += w[:, j, None] * aj
            y[j, :, 3] += w[:, j]
        p = pose_jac.parents[j]
        if p >= 0:
            y[p] += y[j]
    for k in range(m):
        zk = y[k] @ pose_jac.g_inv[k].T  # (n, 4)
        if not zk.any():
            continue
        base = pose_jac.param_index(k)
        for i in range(3):
            out[:, :, base + i] = zk @ pose_jac.d_mats[k, i, :3, :].T
    return out


def pose_pullback(
    pose_jac: PoseJacobian,
    weight_rows: np.ndarray,
    rest_points: np.ndarray,
    g_rows: np.ndarray,
) -> np.ndarray:
    """Gradient of sum_v <g_v, posed_v> over the pose vector.

    weight_rows: (n, M) skinning weights of the contributing points;
    rest_points: (n, 3) their shaped rest positions; g_rows: (n, 3) the loss
    gradients at the posed positions. Posed joint positions themselves can be
    included as pseudo-points with a one-hot weight row and the rest joint as
    position.
    """
    w = np.asarray(weight_rows, dtype=float)
    vs = np.asarray(rest_points, dtype=float)
    g = np.asarray(g_rows, dtype=float)
    m = pose_jac.m
    outer = np.einsum("vj,va,vb->jab", w, g, vs)  # (M,3,3)
    sums = np.einsum("vj,va->ja", w, g)  # (M,3)
    p = np.zeros((m, 4, 4))
    p[:, :3, :3] = outer - np.einsum("ja,jb->jab", sums, pose_jac.rest_joints)
    p[:, :3, 3] = sums
    return pose_jac.pullback(p, g.sum(axis=0))
