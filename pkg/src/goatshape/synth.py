"""Synthetic dataset generation: planted shape spaces, pose families, scans.

Stands in for real captures: subjects are drawn from a shape space, posed by
a named family's angle ranges, vertex noise and landmark jitter/dropout are
applied, and the ground truth is stored alongside each scan.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

from .errors import ConfigError
from .geometry.mesh import Mesh, vertex_normals
from .geometry.meshio import save_ply
from .model.kinematics import Pose, skinning_transforms
from .model.lbs import regress_joints
from .model.template import Template
from .registration.scan import Scan, save_landmarks
from .shapespace import ShapeParams, ShapeSpace

POSE_FAMILIES = ("standing", "walking", "head-turn", "look-back", "head-low")

# per-family articulation: joint-name substring -> (axis, max |angle| rad)
_FAMILY_RANGES: Dict[str, List] = {
    "standing": [
        ("elbow", 1, 0.06), ("stifle", 1, 0.06), ("knee", 1, 0.05),
        ("hock", 1, 0.05), ("neck_base", 1, 0.08), ("head", 1, 0.06),
        ("spine", 1, 0.03),
    ],
    "walking": [
        ("shoulder", 1, 0.18), ("elbow", 1, 0.22), ("knee", 1, 0.18),
        ("hip", 1, 0.18), ("stifle", 1, 0.22), ("hock", 1, 0.18),
        ("spine", 1, 0.04), ("neck_base", 1, 0.08),
    ],
    "head-turn": [
        ("neck_base", 2, 0.18), ("neck_mid", 2, 0.2), ("neck_top", 2, 0.18),
        ("head", 2, 0.25), ("spine_thoracic", 2, 0.05),
    ],
    "look-back": [
        ("neck_base", 2, 0.3), ("neck_mid", 2, 0.32), ("neck_top", 2, 0.28),
        ("head", 2, 0.3), ("spine_mid", 2, 0.08), ("spine_thoracic", 2, 0.08),
    ],
    "head-low": [
        ("neck_base", 1, -0.35), ("neck_mid", 1, -0.3), ("neck_top", 1, -0.25),
        ("head", 1, -0.2),
    ],
}


@dataclass(frozen=True)
class SyntheticScanSpec:
    count: int = 1
    beta_clip: float = 2.0  # sigma clip for shape sampling
    pose_families: tuple = ("standing",)
    noise_mm: float = 0.0  # vertex noise sigma
    landmark_jitter_mm: float = 0.0
    landmark_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("count must be >= 1")
        if min(self.noise_mm, self.landmark_jitter_mm) < 0:
            raise ConfigError("noise sigmas must be >= 0")
        if not 0 <= self.landmark_dropout < 1:
            raise ConfigError("landmark_dropout must be in [0, 1)")
        for fam in self.pose_families:
            if fam not in POSE_FAMILIES:
                raise ConfigError(f"unknown pose family {fam!r}")


def _similarity_modes(points: np.ndarray) -> np.ndarray:
    """Seven infinitesimal similarity modes (translations, rotations, scale)
    of a point set, as flat (7, 3n) rows."""
    c = points - points.mean(axis=0)
    n = len(points)
    modes = []
    for axis in range(3):
        t = np.zeros((n, 3))
        t[:, axis] = 1.0
        modes.append(t.ravel())
    for axis in range(3):
        w = np.zeros(3)
        w[axis] = 1.0
        modes.append(np.cross(np.broadcast_to(w, (n, 3)), c).ravel())
    modes.append(c.ravel())
    return np.stack(modes)


def similarity_neutral_fields(template: Template, fields: np.ndarray) -> np.ndarray:
    """Silence each field against the landmark-restricted similarity modes.

    The registration seed is a similarity Procrustes over the 32 landmarks,
    so any landmark-visible similarity component of a planted shape would be
    absorbed by the seed instead of the displacement field. Subtracting
    global modes weighted to zero the landmark components keeps the planted
    shapes in the subspace the fitter can attribute correctly.
    """
    v = template.rest_mesh.vertices
    lm_ids = template.landmark_ids
    modes_global = _similarity_modes(v)  # (7, 3n)
    modes_lm = modes_global.reshape(7, -1, 3)[:, lm_ids, :].reshape(7, -1)
    gram = modes_lm @ modes_lm.T
    out = np.asarray(fields, dtype=float).reshape(len(fields), -1).copy()
    f_lm = out.reshape(len(out), -1, 3)[:, lm_ids, :].reshape(len(out), -1)
    coeffs = np.linalg.solve(gram, modes_lm @ f_lm.T).T  # (k, 7)
    out -= coeffs @ modes_global
    return out


def make_planted_space(
    template: Template,
    k: int,
    seed: int = 0,
    rms_mm: float = 12.0,
    whitened: bool = False,
) -> ShapeSpace:
    """Smooth, similarity-neutral, normal-dominant displacement basis.

    Fields are low-frequency harmonics of the rest-pose coordinates pushed
    along vertex normals (surface fitting cannot observe tangential sliding,
    so test bases stay in the observable subspace).
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    rng = np.random.default_rng(seed)
    v = template.rest_mesh.vertices
    vn = vertex_normals(template.rest_mesh)
    c = v - v.mean(axis=0)
    fields = []
    for _ in range(k):
        freq = rng.uniform(1.0, 4.0, size=3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        amp = (
            np.sin(freq[0] * c[:, 0] + phase[0])
            + np.sin(freq[1] * c[:, 1] + phase[1])
            + np.sin(freq[2] * c[:, 2] + phase[2])
        )
        fields.append((amp[:, None] * vn).ravel())
    fields = similarity_neutral_fields(template, np.stack(fields))
    # orthonormalize, then scale so one sigma of coefficient produces the
    # requested RMS displacement
    q, _ = np.linalg.qr(fields.T)
    basis = q.T[:k]
    n = len(v)
    sigma_m = rms_mm / 1000.0 * np.sqrt(n)  # flat-vector norm for target RMS
    variances = (sigma_m * np.linspace(1.0, 0.5, k)) ** 2
    return ShapeSpace(np.zeros(3 * n), basis, variances, whitened=whitened)


def family_pose(template: Template, family: str, rng) -> Pose:
    """Random pose drawn from a family's per-joint angle ranges."""
    if family not in _FAMILY_RANGES:
        raise ConfigError(f"unknown pose family {family!r}")
    m = template.n_joints
    root = template.root
    jr = np.zeros((m - 1, 3))
    for key, axis, max_angle in _FAMILY_RANGES[family]:
        for j, name in enumerate(template.joint_names):
            if key in name and j != root:
                k = j if j < root else j - 1
                lo, hi = sorted((0.0, max_angle))
                jr[k, axis] = rng.uniform(lo, hi)
    root_rot = rng.normal(0.0, 0.03, 3)
    root_t = rng.normal(0.0, 0.02, 3)
    return Pose(root_rot, jr, root_t)


def synthesize_subject(
    template: Template,
    space: ShapeSpace,
    beta: ShapeParams,
    pose: Pose,
    noise_mm: float = 0.0,
    rng=None,
) -> tuple:
    """Posed subject mesh with ground-truth landmark positions.

    Returns (noisy mesh, clean posed vertices, shaped rest vertices).
    """
    rng = np.random.default_rng(rng)
    shaped = template.rest_mesh.vertices + space.reconstruct(beta).reshape(-1, 3)
    rest_joints = regress_joints(template, shaped)
    a = skinning_transforms(rest_joints, template.parents, pose)
    blended = np.einsum("vj,jab->vab", template.weights, a[:, :3, :])
    posed = np.einsum("vab,vb->va", blended[:, :, :3], shaped) + blended[:, :, 3]
    noisy = posed.copy()
    if noise_mm > 0:
        noisy += rng.normal(0.0, noise_mm / 1000.0, posed.shape)
    mesh = Mesh(noisy, template.rest_mesh.faces, template.rest_mesh.regions)
    return mesh, posed, shaped


def synthetic_scan(
    template: Template,
    space: ShapeSpace,
    spec: SyntheticScanSpec,
    index: int,
) -> tuple:
    """One deterministic synthetic scan. Returns (Scan, truth dict)."""
    rng = np.random.default_rng([spec.seed, index])
    family = spec.pose_families[index % len(spec.pose_families)]
    beta = space.sample(spec.beta_clip, rng) if space.k else ShapeParams.zero(0)
    pose = family_pose(template, family, rng)
    mesh, posed, shaped = synthesize_subject(
        template, space, beta, pose, spec.noise_mm, rng
    )
    landmarks = {}
    for name, vid in template.landmarks.items():
        if spec.landmark_dropout > 0 and rng.uniform() < spec.landmark_dropout:
            continue
        p = posed[vid].copy()
        if spec.landmark_jitter_mm > 0:
            p += rng.normal(0.0, spec.landmark_jitter_mm / 1000.0, 3)
        landmarks[name] = p
    scan_id = f"synth_{index:04d}"
    scan = Scan(mesh, landmarks, scan_id)
    truth = {
        "scan_id": scan_id,
        "family": family,
        "beta": beta.beta.tolist(),
        "root_rotation": pose.root_rotation.tolist(),
        "joint_rotations": pose.joint_rotations.tolist(),
        "root_translation": pose.root_translation.tolist(),
        "noise_mm": spec.noise_mm,
        "seed": spec.seed,
        "index": index,
    }
    return scan, truth


def generate_synthetic_dataset(
    template: Template,
    space: ShapeSpace,
    spec: SyntheticScanSpec,
    out_dir,
    metadata: dict | None = None,
) -> List[dict]:
    """Write scans (PLY + landmark JSON + truth JSON); returns truth records."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truths = []
    meta = dict(metadata or {})
    meta["seed"] = str(spec.seed)
    for i in range(spec.count):
        scan, truth = synthetic_scan(template, space, spec, i)
        save_ply(out / f"{scan.id}.ply", scan.mesh, meta)
        save_landmarks(out / f"{scan.id}.landmarks.json", scan.landmarks,
                       {"seed": spec.seed})
        (out / f"{scan.id}.truth.json").write_text(
            json.dumps(truth, sort_keys=True, indent=2) + "\n"
        )
        truths.append(truth)
    return truths
