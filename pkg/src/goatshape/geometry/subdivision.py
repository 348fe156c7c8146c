"""Loop subdivision for triangle meshes.

Interior even vertices use beta = 3/16 (valence 3) or 3/(8n); boundary
vertices and edge midpoints fall back to the 1/8-3/4-1/8 curve rule.
Region labels propagate to edge vertices from the parent edge endpoints.
"""

from __future__ import annotations

import numpy as np

from ..errors import MeshError
from .mesh import Mesh


def loop_subdivide(mesh: Mesh, levels: int = 1) -> Mesh:
    if levels < 1:
        raise MeshError("levels must be >= 1")
    out = mesh
    for _ in range(levels):
        out = _subdivide_once(out)
    return out


def _subdivide_once(mesh: Mesh) -> Mesh:
    v = mesh.vertices
    f = mesh.faces
    n = len(v)

    # edge -> (new vertex id, incident faces, opposite vertices)
    edge_ids: dict[tuple[int, int], int] = {}
    edge_opposites: list[list[int]] = []
    edge_count: list[int] = []
    for face in f:
        for k in range(3):
            i, j = int(face[k]), int(face[(k + 1) % 3])
            opp = int(face[(k + 2) % 3])
            key = (i, j) if i < j else (j, i)
            if key not in edge_ids:
                edge_ids[key] = len(edge_opposites)
                edge_opposites.append([])
                edge_count.append(0)
            eid = edge_ids[key]
            edge_count[eid] += 1
            if edge_count[eid] > 2:
                raise MeshError(f"non-manifold edge {key} (more than 2 faces)")
            edge_opposites[eid].append(opp)

    edges = np.array(list(edge_ids.keys()), dtype=np.int64)
    n_edges = len(edges)
    is_boundary_edge = np.array([c == 1 for c in edge_count])

    # odd (edge) vertices
    edge_pts = np.empty((n_edges, 3))
    interior = ~is_boundary_edge
    if interior.any():
        opp = np.array(
            [edge_opposites[e] for e in np.flatnonzero(interior)], dtype=np.int64
        )
        ei = edges[interior]
        edge_pts[interior] = (
            0.375 * (v[ei[:, 0]] + v[ei[:, 1]])
            + 0.125 * (v[opp[:, 0]] + v[opp[:, 1]])
        )
    if is_boundary_edge.any():
        eb = edges[is_boundary_edge]
        edge_pts[is_boundary_edge] = 0.5 * (v[eb[:, 0]] + v[eb[:, 1]])

    # even (original) vertices
    boundary_vertex = np.zeros(n, dtype=bool)
    boundary_nbrs: dict[int, list[int]] = {}
    for (i, j), bnd in zip(edges, is_boundary_edge):
        if bnd:
            boundary_vertex[i] = boundary_vertex[j] = True
            boundary_nbrs.setdefault(int(i), []).append(int(j))
            boundary_nbrs.setdefault(int(j), []).append(int(i))

    valence = np.zeros(n, dtype=np.int64)
    nbr_sum = np.zeros((n, 3))
    np.add.at(valence, edges[:, 0], 1)
    np.add.at(valence, edges[:, 1], 1)
    np.add.at(nbr_sum, edges[:, 0], v[edges[:, 1]])
    np.add.at(nbr_sum, edges[:, 1], v[edges[:, 0]])

    new_even = np.empty_like(v)
    inner = ~boundary_vertex & (valence > 0)
    val = valence[inner].astype(float)
    beta = np.where(val == 3.0, 3.0 / 16.0, 3.0 / (8.0 * val))
    new_even[inner] = (
        (1.0 - val * beta)[:, None] * v[inner] + beta[:, None] * nbr_sum[inner]
    )
    new_even[valence == 0] = v[valence == 0]  # isolated vertices pass through
    for i in np.flatnonzero(boundary_vertex):
        nbrs = boundary_nbrs[int(i)]
        if len(nbrs) == 2:
            new_even[i] = 0.75 * v[i] + 0.125 * (v[nbrs[0]] + v[nbrs[1]])
        else:
            new_even[i] = v[i]  # corner / non-regular boundary: keep position

    new_vertices = np.concatenate([new_even, edge_pts])

    # 4 faces per original face
    eid_of = np.empty((len(f), 3), dtype=np.int64)
    for t, face in enumerate(f):
        for k in range(3):
            i, j = int(face[k]), int(face[(k + 1) % 3])
            key = (i, j) if i < j else (j, i)
            eid_of[t, k] = edge_ids[key] + n
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    e0, e1, e2 = eid_of[:, 0], eid_of[:, 1], eid_of[:, 2]
    new_faces = np.concatenate(
        [
            np.stack([a, e0, e2], axis=1),
            np.stack([b, e1, e0], axis=1),
            np.stack([c, e2, e1], axis=1),
            np.stack([e0, e1, e2], axis=1),
        ]
    )

    regions = None
    if mesh.regions is not None:
        # edge vertices inherit the endpoint majority; on a tie (two distinct
        # labels) take the label of the lower-indexed endpoint
        r = mesh.regions
        edge_regions = np.where(
            r[edges[:, 0]] == r[edges[:, 1]],
            r[edges[:, 0]],
            r[np.minimum(edges[:, 0], edges[:, 1])],
        )
        regions = np.concatenate([r, edge_regions.astype(np.int8)])

    return Mesh(new_vertices, new_faces, regions)
