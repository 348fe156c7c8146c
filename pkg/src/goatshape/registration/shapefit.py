"""Per-vertex displacement refinement of the pose-aligned mesh.

Minimizes a part-partitioned objective (vertex match, displacement
smoothness, edge-length stability, normal consistency) plus a global
composite, over the free displacement field. Parts follow the template's
region labels; per-part means give sparse regions (head, legs) weight
comparable to the dense torso.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from scipy.sparse import csr_matrix

from ..errors import ConfigError, FitError, NaNLossError
from ..geometry.distance import SurfaceIndex
from ..geometry.mesh import Mesh, REGION_NAMES, face_normals, vertex_normals
from ..geometry.rotations import RigidTransform
from ..optimize import minimize
from .posefit import MM2
from .scan import Scan

SHAPE_TERMS = ("vertex", "smooth", "edge", "normal")


@dataclass(frozen=True)
class ShapeFitConfig:
    w_vertex: float = 0.5
    w_smooth: float = 0.1
    w_edge: float = 0.1
    w_normal: float = 0.1
    lambda_global: float = 0.2
    max_iterations: int = 200
    epoch_iterations: int = 10
    convergence_tolerance: float = 1e-4  # relative epoch-loss plateau
    normal_gate_deg: float = 60.0
    step: float = 0.002
    divergence_patience: int = 5

    def __post_init__(self):
        if min(self.w_vertex, self.w_smooth, self.w_edge, self.w_normal,
               self.lambda_global) < 0:
            raise ConfigError("shape-fit weights must be >= 0")


class ShapeFitState:
    """Topology-derived constants and per-item part coefficients.

    Because the parts partition vertices/edges/face-pairs, the part sum plus
    the global term reduce to per-item coefficients c = 1/|part| + lambda/|all|
    (zero part share for items straddling two parts).
    """

    def __init__(self, template, scan_model: Mesh, posed: Mesh,
                 cfg: ShapeFitConfig):
        if posed.regions is None:
            raise ConfigError("shape fitting requires region labels")
        self.cfg = cfg
        self.posed = posed.vertices
        self.faces = posed.faces
        self.scan = scan_model
        self.scan_fnormals = face_normals(scan_model)
        self.scan_index = SurfaceIndex(scan_model)
        self.gate_cos = float(np.cos(np.deg2rad(cfg.normal_gate_deg)))
        n = len(self.posed)
        labels = posed.regions

        part_sizes = np.bincount(labels, minlength=len(REGION_NAMES))
        self.coef_vertex = np.where(
            part_sizes[labels] > 0, 1.0 / np.maximum(part_sizes[labels], 1), 0.0
        ) + cfg.lambda_global / n

        mesh = posed
        edges = mesh.edges()
        self.edges = edges
        e_labels = np.where(
            labels[edges[:, 0]] == labels[edges[:, 1]], labels[edges[:, 0]], -1
        )
        e_sizes = np.bincount(e_labels[e_labels >= 0], minlength=len(REGION_NAMES))
        self.coef_edge = np.where(
            e_labels >= 0, 1.0 / np.maximum(e_sizes[np.maximum(e_labels, 0)], 1), 0.0
        ) + cfg.lambda_global / len(edges)
        rest_e = self.posed[edges[:, 1]] - self.posed[edges[:, 0]]
        self.rest_len = np.linalg.norm(rest_e, axis=1)
        if (self.rest_len < 1e-12).any():
            raise ConfigError("posed mesh has zero-length edges")

        # uniform Laplacian (vertex minus neighbor mean)
        deg = np.bincount(edges.ravel(), minlength=n).astype(float)
        rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
        cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
        vals = np.concatenate([
            -1.0 / deg[edges[:, 0]],
            -1.0 / deg[edges[:, 1]],
            np.ones(n),
        ])
        self.lap = csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.coef_smooth = self.coef_vertex.copy()  # same per-vertex pattern

        # adjacent face pairs sharing an interior edge
        face_labels = self._face_labels(labels)
        edge_faces: Dict[tuple, List[int]] = {}
        for t, face in enumerate(self.faces):
            for k in range(3):
                i, j = int(face[k]), int(face[(k + 1) % 3])
                key = (i, j) if i < j else (j, i)
                edge_faces.setdefault(key, []).append(t)
        pairs = [fs for fs in edge_faces.values() if len(fs) == 2]
        self.pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        p_labels = np.where(
            face_labels[self.pairs[:, 0]] == face_labels[self.pairs[:, 1]],
            face_labels[self.pairs[:, 0]],
            -1,
        )
        p_sizes = np.bincount(p_labels[p_labels >= 0], minlength=len(REGION_NAMES))
        self.coef_pair = np.where(
            p_labels >= 0, 1.0 / np.maximum(p_sizes[np.maximum(p_labels, 0)], 1), 0.0
        ) + cfg.lambda_global / max(len(self.pairs), 1)

        # sparse scatter operators (much faster than np.add.at)
        ne = len(edges)
        ones = np.ones(ne)
        self.edge_inc = csr_matrix(
            (np.concatenate([ones, -ones]),
             (np.concatenate([edges[:, 1], edges[:, 0]]),
              np.concatenate([np.arange(ne), np.arange(ne)]))),
            shape=(n, ne),
        )
        nf = len(self.faces)
        self.face_scatter = [
            csr_matrix(
                (np.ones(nf), (self.faces[:, k], np.arange(nf))), shape=(n, nf)
            )
            for k in range(3)
        ]
        npair = len(self.pairs)
        self.pair_scatter = [
            csr_matrix(
                (np.ones(npair), (self.pairs[:, k], np.arange(npair))),
                shape=(nf, npair),
            )
            for k in range(2)
        ]

    def _face_labels(self, labels):
        fl = labels[self.faces]  # (F,3)
        out = np.where(
            (fl[:, 0] == fl[:, 1]) | (fl[:, 0] == fl[:, 2]),
            fl[:, 0],
            np.where(fl[:, 1] == fl[:, 2], fl[:, 1], fl[:, 0]),
        )
        return out

    def associate(self, delta: np.ndarray):
        """Per-vertex closest scan points (and their normals) with a
        normal-compatibility gate."""
        deformed = Mesh(self.posed + delta, self.faces)
        hit = self.scan_index.query(deformed.vertices)
        vn = vertex_normals(deformed)
        normals = self.scan_fnormals[hit.triangles]
        gate = np.einsum("ij,ij->i", vn, normals) >= self.gate_cos
        return hit.points, normals, gate

    def loss(self, delta_flat: np.ndarray, targets, target_normals, gate,
             want_grad=True):
        cfg = self.cfg
        delta = delta_flat.reshape(-1, 3)
        x = self.posed + delta
        terms: Dict[str, float] = {}
        grad = np.zeros_like(delta) if want_grad else None

        # vertex match: point-to-plane on the frozen target (mm^2); the
        # plane form exerts no tangential pull, so the parameterization
        # cannot slide across the scan surface during fitting
        s = np.einsum("ij,ij->i", x - targets, target_normals) * gate
        terms["vertex"] = float((self.coef_vertex * s**2).sum()) * MM2
        if want_grad:
            grad += (2.0 * MM2 * cfg.w_vertex) * (
                (self.coef_vertex * s)[:, None] * target_normals
            )

        # smoothness of the displacement field (mm^2)
        lap_d = self.lap @ delta
        terms["smooth"] = float(
            (self.coef_smooth * (lap_d**2).sum(axis=1)).sum()
        ) * MM2
        if want_grad:
            grad += (2.0 * MM2 * cfg.w_smooth) * (
                self.lap.T @ (self.coef_smooth[:, None] * lap_d)
            )

        # relative edge-length stability (dimensionless)
        ev = x[self.edges[:, 1]] - x[self.edges[:, 0]]
        elen = np.linalg.norm(ev, axis=1)
        t = (elen - self.rest_len) / self.rest_len
        terms["edge"] = float((self.coef_edge * t**2).sum())
        if want_grad:
            coef = (2.0 * cfg.w_edge) * self.coef_edge * t / (
                self.rest_len * np.maximum(elen, 1e-12)
            )
            grad += self.edge_inc @ (coef[:, None] * ev)

        # neighboring face-normal consistency (dimensionless)
        v0 = x[self.faces[:, 0]]
        v1 = x[self.faces[:, 1]]
        v2 = x[self.faces[:, 2]]
        c = np.cross(v1 - v0, v2 - v0)
        cn = np.linalg.norm(c, axis=1)
        cn_safe = np.maximum(cn, 1e-18)
        nrm = c / cn_safe[:, None]
        na = nrm[self.pairs[:, 0]]
        nb = nrm[self.pairs[:, 1]]
        dots = np.einsum("ij,ij->i", na, nb)
        terms["normal"] = float((self.coef_pair * (1.0 - dots)).sum())
        if want_grad and len(self.pairs):
            g_n = -(
                self.pair_scatter[0] @ (self.coef_pair[:, None] * nb)
                + self.pair_scatter[1] @ (self.coef_pair[:, None] * na)
            )
            # through the normalization: dn/dc = (I - n n^T)/|c|
            g_c = (g_n - nrm * np.einsum("ij,ij->i", nrm, g_n)[:, None]) / (
                cn_safe[:, None]
            )
            g_c *= cfg.w_normal
            grad += self.face_scatter[0] @ np.cross(v1 - v2, g_c)
            grad += self.face_scatter[1] @ np.cross(v2 - v0, g_c)
            grad += self.face_scatter[2] @ np.cross(v0 - v1, g_c)

        for name, val in terms.items():
            if not np.isfinite(val):
                raise NaNLossError(name)
        total = (
            cfg.w_vertex * terms["vertex"]
            + cfg.w_smooth * terms["smooth"]
            + cfg.w_edge * terms["edge"]
            + cfg.w_normal * terms["normal"]
        )
        return total, terms, (grad.ravel() if want_grad else None)


def shape_fit_loss(template, scan_model: Mesh, posed: Mesh, delta: np.ndarray,
                   cfg: ShapeFitConfig | None = None):
    """Objective value and per-term breakdown at a given displacement."""
    cfg = cfg or ShapeFitConfig()
    state = ShapeFitState(template, scan_model, posed, cfg)
    targets, normals, gate = state.associate(
        np.asarray(delta, dtype=float).reshape(-1, 3)
    )
    total, terms, _ = state.loss(np.asarray(delta, float).ravel(), targets,
                                 normals, gate, want_grad=False)
    return total, terms


def fit_shape(template, scan: Scan, posed: Mesh,
              cfg: ShapeFitConfig | None = None,
              rigid: RigidTransform | None = None):
    """Optimize the displacement field. Returns (delta (N,3), report).

    `rigid` maps the scan into the model frame (identity when None).
    """
    cfg = cfg or ShapeFitConfig()
    rigid = rigid or RigidTransform.identity()
    scan_model = Mesh(rigid.apply(scan.mesh.vertices), scan.mesh.faces)
    state = ShapeFitState(template, scan_model, posed, cfg)

    n = posed.n_vertices
    delta = np.zeros(3 * n)
    epoch_losses: List[float] = []
    history: List[dict] = []
    iters_used = 0
    while iters_used < cfg.max_iterations:
        targets, normals, gate = state.associate(delta.reshape(-1, 3))

        def closure(d, targets=targets, normals=normals, gate=gate):
            total, _, grad = state.loss(d, targets, normals, gate)
            return total, grad

        res = minimize(
            closure, delta,
            max_iterations=cfg.epoch_iterations,
            tolerance=cfg.convergence_tolerance * 1e-3,
            step=cfg.step,
            max_step=cfg.step * 8,
        )
        delta = res.x
        iters_used += max(res.iterations, 1)
        total, terms, _ = state.loss(delta, targets, normals, gate,
                                     want_grad=False)
        epoch_losses.append(total)
        history.append({"epoch_loss": total, "accepted": list(res.history),
                        **{f"term_{k}": v for k, v in terms.items()}})
        p = cfg.divergence_patience
        if len(epoch_losses) > p and epoch_losses[-1] > epoch_losses[-1 - p] * (
            1.0 + 1e-9
        ):
            raise FitError(
                "shape fit diverged",
                {"epoch_losses": epoch_losses[-p - 1:], "terms": terms},
            )
        if len(epoch_losses) >= 2:
            drop = epoch_losses[-2] - epoch_losses[-1]
            if drop <= cfg.convergence_tolerance * max(1.0, abs(epoch_losses[-2])):
                break
    report = {"epochs": history, "iterations": iters_used}
    return delta.reshape(-1, 3), report
