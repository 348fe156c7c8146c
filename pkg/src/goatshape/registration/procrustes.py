"""Closed-form similarity alignment of corresponding point sets (SVD)."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..geometry.rotations import RigidTransform

_COLLINEAR_TOL = 1e-9


def procrustes_align(
    source: np.ndarray, target: np.ndarray, with_scale: bool = True
) -> RigidTransform:
    """Least-squares similarity transform mapping source points onto target.

    Minimizes sum ||s R x_i + t - y_i||^2; the reflection case is excluded by
    a sign correction on the smallest singular direction. Requires >= 3
    non-collinear correspondences.
    """
    x = np.asarray(source, dtype=float).reshape(-1, 3)
    y = np.asarray(target, dtype=float).reshape(-1, 3)
    if x.shape != y.shape:
        raise ConfigError("source and target must have matching shapes")
    n = len(x)
    if n < 3:
        raise ConfigError(f"need at least 3 correspondences, got {n}")
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    cov = (yc.T @ xc) / n
    u, d, vt = np.linalg.svd(cov)
    sx = np.linalg.svd(xc, compute_uv=False)
    if sx[1] <= _COLLINEAR_TOL * max(sx[0], 1e-300):
        raise ConfigError("correspondences are collinear; rotation is ambiguous")
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    fix = np.diag([1.0, 1.0, sign])
    rot = u @ fix @ vt
    if with_scale:
        var_x = (xc**2).sum() / n
        scale = float(np.trace(np.diag(d) @ fix) / var_x)
        if scale <= 0:
            raise ConfigError("degenerate configuration produced a non-positive scale")
    else:
        scale = 1.0
    t = mu_y - scale * (rot @ mu_x)
    return RigidTransform(rot, t, scale)


def landmark_rms(transform: RigidTransform, source, target) -> float:
    """Root-mean-square residual of the aligned correspondences (meters)."""
    res = transform.apply(source) - np.asarray(target, dtype=float)
    return float(np.sqrt((res**2).sum(axis=1).mean()))
