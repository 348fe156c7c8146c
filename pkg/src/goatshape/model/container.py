"""Self-describing model container: template + shape space in one file.

Layout: a zip of .npy arrays (numpy's npz format) written with fixed zip
timestamps so identical content is byte-identical. Sparse matrices are stored
as CSR triples; tables as JSON strings. A `format_version` entry gates
readers.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix

from .. import FORMAT_VERSION
from ..errors import FileFormatError
from ..geometry.mesh import Mesh
from ..shapespace import ShapeSpace, empty_shape_space
from .template import Template

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _savez_deterministic(path, arrays: dict) -> None:
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_DATE)
            zf.writestr(info, buf.getvalue())


def _sparse_entries(prefix, mat) -> dict:
    sp = csr_matrix(mat)
    sp.sort_indices()
    return {
        f"{prefix}_data": sp.data.astype(np.float64),
        f"{prefix}_indices": sp.indices.astype(np.int64),
        f"{prefix}_indptr": sp.indptr.astype(np.int64),
        f"{prefix}_shape": np.array(sp.shape, dtype=np.int64),
    }


def _sparse_load(z, prefix) -> np.ndarray:
    sp = csr_matrix(
        (z[f"{prefix}_data"], z[f"{prefix}_indices"], z[f"{prefix}_indptr"]),
        shape=tuple(z[f"{prefix}_shape"]),
    )
    return np.asarray(sp.todense())


def save_model(
    path,
    template: Template,
    space: ShapeSpace | None = None,
    metadata: dict | None = None,
) -> None:
    space = space if space is not None else empty_shape_space(template.n_vertices)
    mesh = template.rest_mesh
    arrays = {
        "format_version": np.array([FORMAT_VERSION], dtype=np.int64),
        "vertices": mesh.vertices,
        "faces": mesh.faces,
        "regions": mesh.regions if mesh.regions is not None else np.zeros(0, np.int8),
        "joints": template.joints,
        "parents": template.parents.astype(np.int64),
        "joint_names": np.array(list(template.joint_names)),
        "landmark_names": np.array(list(template.landmarks.keys())),
        "landmark_ids": np.array(list(template.landmarks.values()), dtype=np.int64),
        "measurement_table": np.array(
            [json.dumps(template.measurement_keypoints, sort_keys=True)]
        ),
        "space_mean": space.mean_displacement,
        "space_basis": space.basis,
        "space_variances": space.variances,
        "space_whitened": np.array([space.whitened], dtype=np.int64),
        "metadata": np.array([json.dumps(metadata or {}, sort_keys=True)]),
    }
    arrays.update(_sparse_entries("weights", template.weights))
    arrays.update(_sparse_entries("regressor", template.joint_regressor))
    _savez_deterministic(path, arrays)


def load_model(path):
    """Returns (template, shape_space, metadata)."""
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"model file not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"][0])
        if version != FORMAT_VERSION:
            raise FileFormatError(
                f"unsupported model format version {version} "
                f"(expected {FORMAT_VERSION})"
            )
        regions = z["regions"] if z["regions"].size else None
        mesh = Mesh(z["vertices"], z["faces"], regions)
        landmark_names = [str(s) for s in z["landmark_names"]]
        landmarks = dict(zip(landmark_names, (int(i) for i in z["landmark_ids"])))
        template = Template(
            rest_mesh=mesh,
            joints=z["joints"],
            parents=z["parents"],
            joint_names=tuple(str(s) for s in z["joint_names"]),
            weights=_sparse_load(z, "weights"),
            joint_regressor=_sparse_load(z, "regressor"),
            landmarks=landmarks,
            measurement_keypoints=json.loads(str(z["measurement_table"][0])),
        )
        space = ShapeSpace(
            z["space_mean"],
            z["space_basis"],
            z["space_variances"],
            whitened=bool(z["space_whitened"][0]),
        )
        metadata = json.loads(str(z["metadata"][0]))
    return template, space, metadata
