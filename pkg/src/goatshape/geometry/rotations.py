"""Axis-angle rotations, their derivatives, and rigid/similarity transforms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

_EPS_ANGLE = 1e-8


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (norm = angle in radians).

    The zero vector maps to the identity.
    """
    a = np.asarray(axis_angle, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ConfigError("axis-angle components must be finite")
    theta = np.linalg.norm(a)
    if theta < _EPS_ANGLE:
        # second-order series keeps the map smooth through zero
        k = _skew(a)
        return np.eye(3) + k + 0.5 * (k @ k)
    k = _skew(a / theta)
    s, c = np.sin(theta), np.cos(theta)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def rodrigues_jacobian(axis_angle: np.ndarray) -> np.ndarray:
    """Derivatives of rodrigues(a) w.r.t. the three axis-angle components.

    Returns an array of shape (3, 3, 3): [i] is dR/da_i.
    """
    a = np.asarray(axis_angle, dtype=float).reshape(3)
    theta2 = float(a @ a)
    out = np.empty((3, 3, 3))
    if theta2 < 1e-12:
        # dR/da_i -> [e_i]_x + 0.5([e_i]_x [a]_x + [a]_x [e_i]_x) near zero
        ka = _skew(a)
        for i in range(3):
            ke = _skew(np.eye(3)[i])
            out[i] = ke + 0.5 * (ke @ ka + ka @ ke)
        return out
    r = rodrigues(a)
    ka = _skew(a)
    eye = np.eye(3)
    for i in range(3):
        v = np.cross(a, (eye - r)[:, i])
        out[i] = ((a[i] * ka + _skew(v)) @ r) / theta2
    return out


def canonicalize_axis_angle(axis_angle: np.ndarray) -> np.ndarray:
    """Wrap an axis-angle vector so its norm lies in [0, pi]."""
    a = np.asarray(axis_angle, dtype=float).reshape(3)
    theta = np.linalg.norm(a)
    if theta <= np.pi or theta < _EPS_ANGLE:
        return a.copy()
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    return a * (wrapped / theta)


def rotation_to_axis_angle(r: np.ndarray) -> np.ndarray:
    """Inverse of rodrigues for a proper rotation matrix (norm <= pi)."""
    r = np.asarray(r, dtype=float)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < _EPS_ANGLE:
        return np.zeros(3)
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part degenerates; recover axis from R + I
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        # fix signs using the off-diagonal entries
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = m[:, i] / axis[i]
        return theta * axis / np.linalg.norm(axis)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta * w / (2.0 * np.sin(theta))


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class AxisAngle:
    """Rotation as an axis-direction vector whose norm is the angle (radians)."""

    vector: np.ndarray

    def __post_init__(self):
        v = canonicalize_axis_angle(self.vector)
        object.__setattr__(self, "vector", v)
        v.flags.writeable = False

    def matrix(self) -> np.ndarray:
        return rodrigues(self.vector)


@dataclass(frozen=True)
class RigidTransform:
    """Similarity transform x -> scale * rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0
    _tol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=self._tol):
            raise ConfigError("rotation must be orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ConfigError("rotation must have determinant +1")
        if not self.scale > 0:
            raise ConfigError("scale must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        r.flags.writeable = False
        t.flags.writeable = False

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def inverse(self) -> "RigidTransform":
        r_inv = self.rotation.T
        s_inv = 1.0 / self.scale
        return RigidTransform(r_inv, -s_inv * (r_inv @ self.translation), s_inv)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then self."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation,
            self.scale * other.scale,
        )

    def with_scale(self, scale: float) -> "RigidTransform":
        return RigidTransform(self.rotation.copy(), self.translation.copy(), scale)
