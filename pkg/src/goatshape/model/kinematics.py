"""Kinematic tree: pose parameters and recursive global joint transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry.rotations import canonicalize_axis_angle, rodrigues, rodrigues_jacobian


@dataclass(frozen=True)
class Pose:
    """Articulated pose: per-joint axis-angle rotations plus a root offset.

    `joint_rotations` has one row per non-root joint, ordered by joint index
    (root excluded). All axis-angle vectors are canonicalized to norm <= pi.
    """

    root_rotation: np.ndarray
    joint_rotations: np.ndarray
    root_translation: np.ndarray

    def __post_init__(self):
        rr = canonicalize_axis_angle(np.asarray(self.root_rotation, dtype=float))
        jr = np.asarray(self.joint_rotations, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(jr)) or not np.all(np.isfinite(rr)):
            raise ConfigError("pose angles must be finite")
        jr = np.stack([canonicalize_axis_angle(a) for a in jr]) if len(jr) else jr
        tr = np.asarray(self.root_translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(tr)):
            raise ConfigError("root translation must be finite")
        object.__setattr__(self, "root_rotation", rr)
        object.__setattr__(self, "joint_rotations", jr)
        object.__setattr__(self, "root_translation", tr)
        for a in (rr, jr, tr):
            a.flags.writeable = False

    @classmethod
    def zero(cls, n_joints: int) -> "Pose":
        return cls(np.zeros(3), np.zeros((n_joints - 1, 3)), np.zeros(3))

    @property
    def n_joints(self) -> int:
        return len(self.joint_rotations) + 1

    def as_vector(self) -> np.ndarray:
        """[root_aa(3), root_translation(3), joint_aa...(3 per non-root joint)]."""
        return np.concatenate(
            [self.root_rotation, self.root_translation, self.joint_rotations.ravel()]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_joints: int) -> "Pose":
        vec = np.asarray(vec, dtype=float).ravel()
        expected = 6 + 3 * (n_joints - 1)
        if len(vec) != expected:
            raise ConfigError(f"pose vector length {len(vec)} != {expected}")
        return cls(vec[0:3], vec[6:].reshape(-1, 3), vec[3:6])

    def rotation_of(self, joint: int, root_index: int) -> np.ndarray:
        """Axis-angle of a joint given the tree's root index."""
        if joint == root_index:
            return self.root_rotation
        k = joint if joint < root_index else joint - 1
        return self.joint_rotations[k]


def validate_tree(parents: np.ndarray) -> int:
    """Check a single rooted tree; returns the root index."""
    parents = np.asarray(parents, dtype=int)
    roots = np.flatnonzero(parents < 0)
    if len(roots) != 1:
        raise ConfigError(f"kinematic tree must have exactly one root, got {len(roots)}")
    root = int(roots[0])
    m = len(parents)
    for j in range(m):
        seen = set()
        k = j
        while k >= 0:
            if k in seen:
                raise ConfigError("kinematic tree contains a cycle")
            seen.add(k)
            k = int(parents[k])
            if len(seen) > m:
                raise ConfigError("kinematic tree contains a cycle")
    return root


def topological_order(parents: np.ndarray) -> np.ndarray:
    """Joint indices ordered so parents precede children."""
    parents = np.asarray(parents, dtype=int)
    order = []
    placed = np.zeros(len(parents), dtype=bool)
    pending = list(range(len(parents)))
    while pending:
        rest = []
        for j in pending:
            if parents[j] < 0 or placed[parents[j]]:
                order.append(j)
                placed[j] = True
            else:
                rest.append(j)
        if len(rest) == len(pending):
            raise ConfigError("kinematic tree contains a cycle")
        pending = rest
    return np.array(order, dtype=int)


def joint_transforms(
    rest_joints: np.ndarray, parents: np.ndarray, pose: Pose
) -> np.ndarray:
    """Global 4x4 transform per joint, composed root-down in topological order.

    At zero pose every transform is the pure translation placing the joint at
    its rest position; the root additionally carries `root_translation`.
    """
    rest_joints = np.asarray(rest_joints, dtype=float)
    parents = np.asarray(parents, dtype=int)
    m = len(parents)
    root = validate_tree(parents)
    if pose.n_joints != m:
        raise ConfigError(f"pose has {pose.n_joints} joints, tree has {m}")
    out = np.zeros((m, 4, 4))
    for j in topological_order(parents):
        local = np.eye(4)
        local[:3, :3] = rodrigues(pose.rotation_of(j, root))
        if parents[j] < 0:
            local[:3, 3] = rest_joints[j] + pose.root_translation
            out[j] = local
        else:
            local[:3, 3] = rest_joints[j] - rest_joints[parents[j]]
            out[j] = out[parents[j]] @ local
    return out


def skinning_transforms(
    rest_joints: np.ndarray, parents: np.ndarray, pose: Pose
) -> np.ndarray:
    """Relative transforms A_j = G_j(pose) @ Ghat_j^-1 used by blend skinning.

    Ghat_j is the rest transform (pure translation to the rest joint), so at
    zero pose with zero translation every A_j is the identity.
    """
    g = joint_transforms(rest_joints, parents, pose)
    a = g.copy()
    # right-multiplying by Trans(-rest_j) only shifts the translation column
    a[:, :3, 3] -= np.einsum("mij,mj->mi", g[:, :3, :3], rest_joints)
    return a


class PoseJacobian:
    """Derivatives of global joint transforms w.r.t. pose parameters.

    Parameter order matches Pose.as_vector(): root axis-angle (3), root
    translation (3), then non-root joint axis-angles. For a loss with
    per-vertex gradient g_v, the pullback uses per-joint accumulators
    P_j = sum_v w_vj [g_v;0] [vhat_v]^T Ghat_j^{-T} so that
    dL/dtheta_k^(i) = <D_k^(i), sum_{j in desc(k)} P_j S_kj^T>.
    """

    def __init__(self, rest_joints, parents, pose: Pose):
        self.rest_joints = np.asarray(rest_joints, dtype=float)
        self.parents = np.asarray(parents, dtype=int)
        self.pose = pose
        self.m = len(self.parents)
        self.root = validate_tree(self.parents)
        self.topo_order = topological_order(self.parents)
        self.g = joint_transforms(self.rest_joints, self.parents, pose)
        self.g_inv = np.linalg.inv(self.g)
        # descendants (inclusive) per joint
        self.descendants = [[] for _ in range(self.m)]
        for j in range(self.m):
            k = j
            while k >= 0:
                self.descendants[k].append(j)
                k = int(self.parents[k])
        # D_k^(i) = G_pre(k) @ Toff_k @ embed(dR_k/dtheta_i)
        self.d_mats = np.zeros((self.m, 3, 4, 4))
        for k in range(self.m):
            pre = (
                np.eye(4) if self.parents[k] < 0 else self.g[self.parents[k]]
            )
            toff = np.eye(4)
            if self.parents[k] < 0:
                toff[:3, 3] = self.rest_joints[k] + pose.root_translation
            else:
                toff[:3, 3] = self.rest_joints[k] - self.rest_joints[self.parents[k]]
            base = pre @ toff
            dr = rodrigues_jacobian(pose.rotation_of(k, self.root))
            for i in range(3):
                emb = np.zeros((4, 4))
                emb[:3, :3] = dr[i]
                self.d_mats[k, i] = base @ emb

    def param_index(self, joint: int) -> int:
        """Offset of the joint's 3 axis-angle params in the pose vector."""
        if joint == self.root:
            return 0
        k = joint if joint < self.root else joint - 1
        return 6 + 3 * k

    def pullback(self, p_mats: np.ndarray, g_total: np.ndarray) -> np.ndarray:
        """Gradient over the pose vector from per-joint accumulators.

        p_mats: (M, 4, 4) accumulators as described above; g_total: (3,)
        summed per-vertex gradient (drives the root translation entries).
        """
        grad = np.zeros(6 + 3 * (self.m - 1))
        grad[3:6] = g_total
        for k in range(self.m):
            desc = self.descendants[k]
            s = self.g_inv[k] @ self.g[desc]  # (d,4,4)
            z = np.einsum("dab,dcb->ac", p_mats[desc], s)
            base = self.param_index(k)
            for i in range(3):
                grad[base + i] = np.sum(self.d_mats[k, i] * z)
        return grad
