"""PCA shape space over pose-normalized vertex displacement fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import ConfigError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class ShapeParams:
    """Shape coefficients; interpretation (raw/whitened) follows the space."""

    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float).ravel()
        if not np.all(np.isfinite(b)):
            raise ConfigError("shape coefficients must be finite")
        object.__setattr__(self, "beta", b)
        b.flags.writeable = False

    def __len__(self):
        return len(self.beta)

    @classmethod
    def zero(cls, k: int) -> "ShapeParams":
        return cls(np.zeros(k))


@dataclass(frozen=True)
class NormalizedShape:
    """Displacement of one pose-normalized subject from the template (3N,)."""

    displacement: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        d = np.asarray(self.displacement, dtype=float).ravel()
        object.__setattr__(self, "displacement", d)
        d.flags.writeable = False


@dataclass(frozen=True)
class ShapeSpace:
    """Orthonormal displacement basis with per-component variances.

    `whitened` selects the coefficient convention: raw coefficients multiply
    the unit basis vectors directly; whitened coefficients are additionally
    scaled by the per-component standard deviation. The flag is stored in the
    model container so files are self-describing.
    """

    mean_displacement: np.ndarray  # (3N,)
    basis: np.ndarray  # (K, 3N), rows orthonormal
    variances: np.ndarray  # (K,), non-increasing
    whitened: bool = False

    def __post_init__(self):
        mean = np.asarray(self.mean_displacement, dtype=float).ravel()
        basis = np.asarray(self.basis, dtype=float)
        var = np.asarray(self.variances, dtype=float).ravel()
        if basis.ndim != 2 or basis.shape[1] != mean.shape[0]:
            raise ConfigError("basis must be (K, 3N) matching the mean")
        if var.shape[0] != basis.shape[0]:
            raise ConfigError("variances must have one entry per component")
        if np.any(var < -1e-12):
            raise ConfigError("variances must be non-negative")
        if np.any(np.diff(var) > 1e-12):
            raise ConfigError("variances must be sorted non-increasing")
        gram = basis @ basis.T
        if np.abs(gram - np.eye(len(var))).max() > 1e-8:
            raise ConfigError("basis vectors must be orthonormal")
        object.__setattr__(self, "mean_displacement", mean)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "variances", np.maximum(var, 0.0))
        for a in (mean, basis):
            a.flags.writeable = False

    @property
    def k(self) -> int:
        return len(self.variances)

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def _coeff_scale(self) -> np.ndarray:
        if not self.whitened:
            return np.ones(self.k)
        return np.where(self.sigmas > 0, self.sigmas, 1.0)

    def project(self, shape: NormalizedShape | np.ndarray) -> ShapeParams:
        """Coefficients of the (mean-removed) displacement on the basis."""
        d = shape.displacement if isinstance(shape, NormalizedShape) else shape
        d = np.asarray(d, dtype=float).ravel()
        if d.shape != self.mean_displacement.shape:
            raise ConfigError("displacement length does not match the space")
        raw = self.basis @ (d - self.mean_displacement)
        return ShapeParams(raw / self._coeff_scale())

    def reconstruct(self, params: ShapeParams | np.ndarray) -> np.ndarray:
        """mean + sum_i beta_i S_i (convention-consistent with project)."""
        b = params.beta if isinstance(params, ShapeParams) else np.asarray(params)
        b = np.asarray(b, dtype=float).ravel()
        if len(b) != self.k:
            raise ConfigError(f"expected {self.k} coefficients, got {len(b)}")
        return self.mean_displacement + (b * self._coeff_scale()) @ self.basis

    def project_gradient(self, g: np.ndarray) -> np.ndarray:
        """Pullback of a displacement-space gradient onto the coefficients."""
        return (self.basis @ np.asarray(g, dtype=float).ravel()) * self._coeff_scale()

    def sample(self, sigma_clip: float, rng) -> ShapeParams:
        """Gaussian per-component draw, clipped to +/- sigma_clip sigmas."""
        if sigma_clip < 0:
            raise ConfigError("sigma_clip must be >= 0")
        rng = np.random.default_rng(rng)
        g = rng.standard_normal(self.k)
        g = np.clip(g, -sigma_clip, sigma_clip)
        if self.whitened:
            return ShapeParams(g)
        return ShapeParams(g * self.sigmas)

    def empty_like(self) -> ShapeParams:
        return ShapeParams.zero(self.k)


def build_shape_space(
    shapes: List[NormalizedShape],
    k: int,
    whitened: bool = False,
) -> ShapeSpace:
    """PCA (via SVD of the centered displacement matrix) over training shapes.

    Raises when `k` exceeds the achievable rank; after centering, n shapes
    support at most n-1 components.
    """
    if len(shapes) < 2:
        raise ConfigError("need at least 2 shapes to build a shape space")
    data = np.stack([s.displacement for s in shapes])  # (n, 3N)
    if data.ndim != 2:
        raise ConfigError("inconsistent displacement lengths")
    mean = data.mean(axis=0)
    centered = data - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * max(s[0], 1.0)))
    if k > rank:
        raise ConfigError(
            f"requested {k} components but the centered data has rank {rank}"
        )
    variances = (s[:k] ** 2) / (len(shapes) - 1)
    return ShapeSpace(mean, vt[:k], variances, whitened=whitened)


def empty_shape_space(n_vertices: int) -> ShapeSpace:
    """Zero-component space for models shipped without trained shapes."""
    return ShapeSpace(
        np.zeros(3 * n_vertices), np.zeros((0, 3 * n_vertices)), np.zeros(0)
    )
