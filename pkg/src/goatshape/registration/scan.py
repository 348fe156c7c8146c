"""Observed scans: a triangle mesh plus named 3D landmark annotations."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np

from ..errors import ConfigError, FileFormatError
from ..geometry.mesh import Mesh
from ..geometry.meshio import load_mesh


@dataclass(frozen=True)
class Scan:
    mesh: Mesh
    landmarks: Dict[str, np.ndarray]  # name -> 3D point (meters), scan frame
    id: str = ""

    def __post_init__(self):
        lm = {}
        for name, p in self.landmarks.items():
            p = np.asarray(p, dtype=float).reshape(3)
            if not np.all(np.isfinite(p)):
                raise ConfigError(f"landmark {name!r} has non-finite coordinates")
            p.flags.writeable = False
            lm[str(name)] = p
        object.__setattr__(self, "landmarks", lm)

    def landmark_array(self, names) -> np.ndarray:
        return np.stack([self.landmarks[n] for n in names])


def check_scan_landmarks(scan: Scan, template) -> list:
    """Validate landmark names against the template; returns present names.

    Scans missing more than half of the template landmarks are rejected.
    """
    known = set(template.landmarks.keys())
    unknown = sorted(set(scan.landmarks) - known)
    if unknown:
        raise ConfigError(f"scan {scan.id!r} has unknown landmark names: {unknown}")
    present = [n for n in template.landmarks if n in scan.landmarks]
    if len(present) < len(known) / 2:
        raise ConfigError(
            f"scan {scan.id!r} has only {len(present)}/{len(known)} landmarks; "
            "at least half are required"
        )
    return present


def save_landmarks(path, landmarks: Dict[str, np.ndarray], metadata=None) -> None:
    doc = {
        "format_version": 1,
        "landmarks": {k: [float(x) for x in v] for k, v in landmarks.items()},
    }
    if metadata:
        doc["metadata"] = metadata
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_landmarks(path) -> Dict[str, np.ndarray]:
    try:
        doc = json.loads(Path(path).read_text())
        return {k: np.asarray(v, dtype=float) for k, v in doc["landmarks"].items()}
    except (json.JSONDecodeError, KeyError) as e:
        raise FileFormatError(f"bad landmark file {path}: {e}") from e


def load_scan(mesh_path, landmarks_path, scan_id="") -> Scan:
    mesh, _ = load_mesh(mesh_path)
    landmarks = load_landmarks(landmarks_path)
    return Scan(mesh, landmarks, scan_id or Path(mesh_path).stem)
