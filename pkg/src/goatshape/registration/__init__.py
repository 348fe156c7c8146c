"""Template-to-scan registration: Procrustes seed, pose fit, shape fit."""

from __future__ import annotations

import numpy as np

from ..errors import FitError
from ..geometry.distance import chamfer_distance, mesh_to_scan_distance
from ..geometry.mesh import Mesh
from ..model.lbs import lbs_forward, lbs_inverse
from ..model.template import Template
from .procrustes import procrustes_align, landmark_rms
from .posefit import PoseFitConfig, PoseFitState, fit_pose, pose_fit_loss
from .shapefit import ShapeFitConfig, fit_shape, shape_fit_loss
from .normalize import normalize_to_tpose
from .result import Registration, load_registration, save_registration
from .scan import Scan, check_scan_landmarks, load_landmarks, load_scan, save_landmarks

__all__ = [
    "procrustes_align",
    "landmark_rms",
    "PoseFitConfig",
    "PoseFitState",
    "fit_pose",
    "pose_fit_loss",
    "ShapeFitConfig",
    "fit_shape",
    "shape_fit_loss",
    "normalize_to_tpose",
    "Registration",
    "save_registration",
    "load_registration",
    "Scan",
    "check_scan_landmarks",
    "load_landmarks",
    "save_landmarks",
    "load_scan",
    "register_scan",
]


def _adapted_template(template: Template, rest_displacement: np.ndarray) -> Template:
    """Template with the rest mesh warped by a (rest-pose) displacement."""
    mesh = template.rest_mesh.with_vertices(
        template.rest_mesh.vertices + rest_displacement
    )
    return Template(
        rest_mesh=mesh,
        joints=template.joint_regressor @ mesh.vertices,
        parents=template.parents,
        joint_names=template.joint_names,
        weights=template.weights,
        joint_regressor=template.joint_regressor,
        landmarks=template.landmarks,
        measurement_keypoints=template.measurement_keypoints,
    )


def register_scan(
    template: Template,
    scan: Scan,
    pose_cfg: PoseFitConfig | None = None,
    shape_cfg: ShapeFitConfig | None = None,
    alternate: int = 1,
) -> Registration:
    """Full registration: Procrustes seed, pose fit, then displacement fit.

    With alternate > 1 the pose stage is re-run against a template warped by
    the current displacement (pulled back to the rest pose) before the
    displacement is re-fit.
    """
    pose_cfg = pose_cfg or PoseFitConfig()
    shape_cfg = shape_cfg or ShapeFitConfig()

    present = check_scan_landmarks(scan, template)
    ids = [template.landmark_names.index(n) for n in present]
    seed = procrustes_align(
        scan.landmark_array(present), template.landmark_positions()[ids]
    )

    stage_chamfer = {}
    scan_seeded = seed.apply(scan.mesh.vertices)
    stage_chamfer["procrustes"] = chamfer_distance(
        template.rest_mesh.vertices, scan_seeded
    ) / seed.scale

    residuals = {}
    work_template = template
    pose = rigid = None
    delta = np.zeros((template.n_vertices, 3))
    for round_idx in range(max(1, alternate)):
        pose, rigid, pose_report = fit_pose(work_template, scan, pose_cfg, seed)
        residuals.setdefault("pose", {"epochs": []})["epochs"].extend(
            pose_report["epochs"]
        )
        residuals["pose"].update(
            seed_landmark=pose_report["seed_landmark"],
            final_landmark=pose_report["final_landmark"],
        )
        posed = lbs_forward(work_template, pose)
        if round_idx == 0:
            scan_model = rigid.apply(scan.mesh.vertices)
            stage_chamfer["pose"] = chamfer_distance(
                posed.vertices, scan_model
            ) / rigid.scale
        delta_round, shape_report = fit_shape(
            work_template, scan, posed, shape_cfg, rigid
        )
        residuals.setdefault("shape", {"epochs": []})["epochs"].extend(
            shape_report["epochs"]
        )
        # displacement is accumulated relative to the ORIGINAL template's
        # posed mesh so the Registration contract stays simple
        base_posed = lbs_forward(template, pose)
        delta = (posed.vertices + delta_round) - base_posed.vertices
        if round_idx + 1 < max(1, alternate):
            unposed = lbs_inverse(
                template, base_posed.vertices + delta, pose
            )
            work_template = _adapted_template(
                template, unposed - template.rest_mesh.vertices
            )

    scan_model = rigid.apply(scan.mesh.vertices)
    deformed = lbs_forward(template, pose).vertices + delta
    final_chamfer = chamfer_distance(deformed, scan_model) / rigid.scale
    stage_chamfer["shape"] = final_chamfer
    deformed_mesh = Mesh(deformed, template.rest_mesh.faces)
    scan_mesh_model = Mesh(scan_model, scan.mesh.faces)
    m2s = mesh_to_scan_distance(deformed_mesh, scan_mesh_model) / rigid.scale

    posed_m2s = mesh_to_scan_distance(
        Mesh(lbs_forward(template, pose).vertices, template.rest_mesh.faces),
        scan_mesh_model,
    ) / rigid.scale
    if m2s >= posed_m2s:
        raise FitError(
            "shape refinement failed to reduce the mesh-to-scan distance",
            {"posed_mm": posed_m2s, "deformed_mm": m2s},
        )

    return Registration(
        scan_id=scan.id,
        rigid=rigid,
        pose=pose,
        displacement=delta,
        residuals=residuals,
        chamfer_mm=final_chamfer,
        mesh_to_scan_mm=m2s,
        stage_chamfer_mm=stage_chamfer,
    )
