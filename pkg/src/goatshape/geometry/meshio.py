"""OBJ and binary little-endian PLY read/write for meshes.

PLY stores region labels as an int8 per-vertex property "region"; OBJ uses a
sidecar text file (one region name per line). Arbitrary string metadata
(format version, seed, config hash) rides along as comment lines.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import FileFormatError
from .mesh import Mesh, REGION_IDS, REGION_NAMES

FORMAT_VERSION = "1"


def _fmt(x: float) -> str:
    return "%.17g" % x


def save_mesh(path, mesh: Mesh, metadata: Optional[dict] = None) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        save_obj(path, mesh, metadata)
    elif path.suffix.lower() == ".ply":
        save_ply(path, mesh, metadata)
    else:
        raise FileFormatError(f"unsupported mesh extension: {path.suffix}")


def load_mesh(path):
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return load_obj(path)
    if path.suffix.lower() == ".ply":
        return load_ply(path)
    raise FileFormatError(f"unsupported mesh extension: {path.suffix}")


def save_obj(path, mesh: Mesh, metadata: Optional[dict] = None) -> None:
    path = Path(path)
    lines = [f"# format_version {FORMAT_VERSION}"]
    for k in sorted(metadata or {}):
        lines.append(f"# {k} {metadata[k]}")
    for p in mesh.vertices:
        lines.append(f"v {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    path.write_text("\n".join(lines) + "\n")
    if mesh.regions is not None:
        sidecar = path.with_suffix(path.suffix + ".regions.txt")
        sidecar.write_text(
            "\n".join(REGION_NAMES[r] for r in mesh.regions) + "\n"
        )


def load_obj(path):
    path = Path(path)
    verts, faces, meta = [], [], {}
    for line in path.read_text().splitlines():
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "#":
            if len(tokens) >= 3:
                meta[tokens[1]] = " ".join(tokens[2:])
            continue
        if tokens[0] == "v":
            verts.append([float(x) for x in tokens[1:4]])
        elif tokens[0] == "f":
            idx = [int(t.split("/")[0]) - 1 for t in tokens[1:4]]
            faces.append(idx)
    regions = None
    sidecar = path.with_suffix(path.suffix + ".regions.txt")
    if sidecar.exists():
        names = sidecar.read_text().split()
        try:
            regions = np.array([REGION_IDS[n] for n in names], dtype=np.int8)
        except KeyError as e:
            raise FileFormatError(f"unknown region label {e}") from e
    return Mesh(np.array(verts), np.array(faces, dtype=np.int32), regions), meta


def save_ply(path, mesh: Mesh, metadata: Optional[dict] = None) -> None:
    path = Path(path)
    has_regions = mesh.regions is not None
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"comment format_version {FORMAT_VERSION}",
    ]
    for k in sorted(metadata or {}):
        header.append(f"comment {k} {metadata[k]}")
    header += [
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if has_regions:
        header.append("property char region")
    header += [
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if has_regions:
            vdt = np.dtype([("xyz", "<f8", 3), ("region", "i1")])
            vbuf = np.empty(mesh.n_vertices, dtype=vdt)
            vbuf["xyz"] = mesh.vertices
            vbuf["region"] = mesh.regions
        else:
            vbuf = mesh.vertices.astype("<f8")
        fh.write(vbuf.tobytes())
        fdt = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
        fbuf = np.empty(mesh.n_faces, dtype=fdt)
        fbuf["n"] = 3
        fbuf["idx"] = mesh.faces
        fh.write(fbuf.tobytes())


_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_ply(path):
    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise FileFormatError("missing PLY end_header")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]
    if not header or header[0].strip() != "ply":
        raise FileFormatError("not a PLY file")

    meta = {}
    elements = []  # (name, count, [(prop_name, dtype) or ('list', ...)])
    fmt = None
    for line in header[1:]:
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "comment" and len(tokens) >= 3:
            meta[tokens[1]] = " ".join(tokens[2:])
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[2], tokens[3], tokens[4]))
            else:
                elements[-1][2].append((tokens[2], tokens[1]))
    if fmt != "binary_little_endian":
        raise FileFormatError(f"unsupported PLY format: {fmt}")

    verts = faces = regions = None
    offset = 0
    for name, count, props in elements:
        if name == "vertex":
            fields = [(p[0], "<" + _PLY_SCALARS[p[1]]) for p in props]
            dt = np.dtype(fields)
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += dt.itemsize * count
            verts = np.stack(
                [arr["x"], arr["y"], arr["z"]], axis=1
            ).astype(np.float64)
            if "region" in dt.names:
                regions = arr["region"].astype(np.int8)
        elif name == "face":
            p = props[0]
            if p[0] != "list":
                raise FileFormatError("face element must be a list property")
            cnt_dt = "<" + _PLY_SCALARS[p[1]]
            idx_dt = "<" + _PLY_SCALARS[p[2]]
            dt = np.dtype([("n", cnt_dt), ("idx", idx_dt, 3)])
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += dt.itemsize * count
            if count and not np.all(arr["n"] == 3):
                raise FileFormatError("only triangle faces are supported")
            faces = arr["idx"].astype(np.int32)
        else:
            raise FileFormatError(f"unsupported PLY element: {name}")
    if verts is None:
        raise FileFormatError("PLY file has no vertex element")
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int32)
    return Mesh(verts, faces, regions), meta


def save_points_ply(path, points: np.ndarray, metadata: Optional[dict] = None):
    """Point cloud convenience: a PLY with no faces."""
    save_ply(path, Mesh(points, np.zeros((0, 3), dtype=np.int32)), metadata)
