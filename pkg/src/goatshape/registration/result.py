"""Registration record: fitted transform, pose, displacement, diagnostics."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .. import FORMAT_VERSION
from ..errors import ConfigError, FileFormatError
from ..geometry.rotations import RigidTransform
from ..model.kinematics import Pose

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class Registration:
    scan_id: str
    rigid: RigidTransform  # maps scan coordinates into the model frame
    pose: Pose
    displacement: np.ndarray  # (N, 3) meters, model frame
    residuals: dict  # per-stage loss histories and term breakdowns
    chamfer_mm: float  # final vertex-to-vertex chamfer, scan metric
    mesh_to_scan_mm: float  # final vertex-to-surface mean, scan metric
    stage_chamfer_mm: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.displacement, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3:
            raise ConfigError("displacement must be (N, 3)")
        object.__setattr__(self, "displacement", d)
        d.flags.writeable = False
        self._check_monotone_history()

    def _check_monotone_history(self):
        for stage in self.residuals.get("pose", {}).get("epochs", []):
            acc = stage.get("accepted", [])
            if any(b > a * (1 + 1e-12) for a, b in zip(acc, acc[1:])):
                raise ConfigError("accepted pose losses must be non-increasing")
        for stage in self.residuals.get("shape", {}).get("epochs", []):
            acc = stage.get("accepted", [])
            if any(b > a * (1 + 1e-12) for a, b in zip(acc, acc[1:])):
                raise ConfigError("accepted shape losses must be non-increasing")


def save_registration(path, reg: Registration, metadata: dict | None = None):
    doc = {
        "format_version": FORMAT_VERSION,
        "scan_id": reg.scan_id,
        "rotation": reg.rigid.rotation.tolist(),
        "translation": reg.rigid.translation.tolist(),
        "scale": reg.rigid.scale,
        "root_rotation": reg.pose.root_rotation.tolist(),
        "joint_rotations": reg.pose.joint_rotations.tolist(),
        "root_translation": reg.pose.root_translation.tolist(),
        "residuals": reg.residuals,
        "chamfer_mm": reg.chamfer_mm,
        "mesh_to_scan_mm": reg.mesh_to_scan_mm,
        "stage_chamfer_mm": reg.stage_chamfer_mm,
        "metadata": metadata or {},
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(
            zipfile.ZipInfo("registration.json", date_time=_ZIP_DATE),
            json.dumps(doc, sort_keys=True, indent=1),
        )
        buf = io.BytesIO()
        np.save(buf, reg.displacement, allow_pickle=False)
        zf.writestr(zipfile.ZipInfo("displacement.npy", date_time=_ZIP_DATE),
                    buf.getvalue())


def load_registration(path) -> Registration:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            doc = json.loads(zf.read("registration.json"))
            disp = np.load(io.BytesIO(zf.read("displacement.npy")),
                           allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
        raise FileFormatError(f"bad registration file {path}: {e}") from e
    if doc.get("format_version") != FORMAT_VERSION:
        raise FileFormatError(
            f"unsupported registration format version {doc.get('format_version')}"
        )
    return Registration(
        scan_id=doc["scan_id"],
        rigid=RigidTransform(
            np.array(doc["rotation"]), np.array(doc["translation"]), doc["scale"]
        ),
        pose=Pose(
            doc["root_rotation"], doc["joint_rotations"], doc["root_translation"]
        ),
        displacement=disp,
        residuals=doc["residuals"],
        chamfer_mm=doc["chamfer_mm"],
        mesh_to_scan_mm=doc["mesh_to_scan_mm"],
        stage_chamfer_mm=doc.get("stage_chamfer_mm", {}),
    )
