"""Pose fitting: five-term loss over skeleton pose plus scan scale.

The scan is mapped into the model frame by the Procrustes seed; during
optimization only the seed's scale is refined (log-parameterized, anchored at
the scan landmark centroid) while articulation is absorbed by the pose. All
surface correspondences are re-established every epoch and kept frozen inside
it, so accepted optimizer steps never increase the frozen loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from ..errors import ConfigError, FitError, NaNLossError
from ..geometry.distance import SurfaceIndex, closest_surface_points
from ..geometry.mesh import face_normals, vertex_normals
from ..geometry.rotations import RigidTransform
from ..model.gradients import lbs_point_jacobian, pose_pullback
from ..model.kinematics import Pose, PoseJacobian
from ..model.lbs import lbs_forward_full
from .procrustes import procrustes_align
from .scan import Scan, check_scan_landmarks

# soft per-joint angle limits (radians) keyed by name substrings; the first
# matching entry wins, `default` otherwise
DEFAULT_JOINT_LIMIT_TABLE = {
    "spine": 0.35,
    "neck": 0.7,
    "head": 0.8,
    "jaw": 0.4,
    "snout": 0.25,
    "ear": 0.6,
    "tail": 0.9,
    "shoulder": 0.9,
    "hip": 0.9,
    "elbow": 1.1,
    "stifle": 1.1,
    "knee": 1.2,
    "hock": 1.2,
    "pastern": 0.8,
    "hoof": 0.6,
    "udder": 0.3,
    "teat": 0.3,
    "default": 0.8,
}

DEFAULT_COLLISION_PROXIES = (
    (("udder_rear", "stifle_left"), (0.075, 0.06)),
    (("udder_rear", "stifle_right"), (0.075, 0.06)),
    (("udder_front", "stifle_left"), (0.07, 0.06)),
    (("udder_front", "stifle_right"), (0.07, 0.06)),
)

POSE_TERMS = ("scale", "landmark", "correspondence", "collision", "pose_reg")

# squared-distance terms are measured in mm^2 (matching reported errors);
# angles stay in radians and the scale term is dimensionless
MM2 = 1.0e6


@dataclass(frozen=True)
class PoseFitConfig:
    lambda_scale: float = 0.1
    lambda_landmark: float = 0.1
    lambda_correspondence: float = 0.2
    lambda_collision: float = 0.1
    lambda_pose_reg: float = 0.15
    max_iterations: int = 300
    convergence_tolerance: float = 1e-3  # relative epoch-loss plateau
    collision_proxies: tuple = DEFAULT_COLLISION_PROXIES
    joint_limit_table: tuple = tuple(sorted(DEFAULT_JOINT_LIMIT_TABLE.items()))
    landmark_stage_iterations: int = 60
    epoch_iterations: int = 6
    correspondence_samples: int = 1500
    normal_gate_deg: float = 60.0
    divergence_patience: int = 6
    # scale refinement beyond the Procrustes seed: off by default because a
    # free scan scale absorbs genuine shape (size) variation; the scale-
    # consistency term still penalizes pose-induced size drift
    refine_scale: bool = False
    # final stages: a regularizer boost collapses data-indifferent pose
    # directions (compensating twists) toward zero, then an annealed pass
    # (regularizer scaled down) removes the prior's bias on well-observed
    # articulated joints
    detangle_boost: float = 25.0
    detangle_iterations: int = 8
    anneal_factor: float = 0.02
    anneal_iterations: int = 10

    def __post_init__(self):
        for name in ("scale", "landmark", "correspondence", "collision", "pose_reg"):
            if getattr(self, f"lambda_{name}") < 0:
                raise ConfigError("loss weights must be >= 0")

    def weights(self) -> Dict[str, float]:
        return {
            "scale": self.lambda_scale,
            "landmark": self.lambda_landmark,
            "correspondence": self.lambda_correspondence,
            "collision": self.lambda_collision,
            "pose_reg": self.lambda_pose_reg,
        }


def joint_limits(template, table) -> np.ndarray:
    table = dict(table)
    out = np.empty(template.n_joints)
    for i, name in enumerate(template.joint_names):
        for key, val in table.items():
            if key != "default" and key in name:
                out[i] = val
                break
        else:
            out[i] = table.get("default", 0.8)
    return out


class _ScanFrame:
    """Scale-refinable mapping of the scan into the model frame.

    T_u(p) = s0 * e^u * R0 (p - c) + c_m with c the scan landmark centroid;
    the anchor keeps the landmarks in place while u changes.
    """

    def __init__(self, seed: RigidTransform, anchor_scan: np.ndarray):
        self.seed = seed
        self.c_scan = np.asarray(anchor_scan, dtype=float)
        self.c_model = seed.apply(self.c_scan)

    def apply(self, points, u: float):
        p = np.asarray(points, dtype=float)
        s = self.seed.scale * np.exp(u)
        return s * ((p - self.c_scan) @ self.seed.rotation.T) + self.c_model

    def rigid(self, u: float) -> RigidTransform:
        s = self.seed.scale * np.exp(u)
        t = self.c_model - s * (self.seed.rotation @ self.c_scan)
        return RigidTransform(self.seed.rotation, t, s)

    def inverse_apply(self, points, u: float):
        p = np.asarray(points, dtype=float)
        s = self.seed.scale * np.exp(u)
        return ((p - self.c_model) / s) @ self.seed.rotation + self.c_scan


@dataclass
class _Correspondences:
    """Epoch-frozen surface pairings (scan-side data in the scan's frame).

    The correspondence energy is point-to-plane: the squared offset along the
    target's frozen normal. This lets surfaces slide tangentially during the
    epoch, which avoids the lock-in local minima of point-to-point ICP.
    """

    fwd_ids: np.ndarray  # model vertex ids
    fwd_targets: np.ndarray  # scan-frame closest points
    fwd_normals: np.ndarray  # scan-frame target normals
    fwd_mask: np.ndarray
    bwd_points: np.ndarray  # scan-frame sample points
    bwd_vert_ids: np.ndarray  # (k, 3) model triangle vertices
    bwd_bary: np.ndarray  # (k, 3)
    bwd_normals: np.ndarray  # model-frame target normals (frozen)
    bwd_mask: np.ndarray

    @property
    def count(self) -> int:
        return len(self.fwd_ids) + len(self.bwd_points)


class PoseFitState:
    """Precomputed scan-side data shared across loss evaluations."""

    def __init__(self, template, scan: Scan, cfg: PoseFitConfig,
                 seed: RigidTransform):
        self.template = template
        self.scan = scan
        self.cfg = cfg
        self.present = check_scan_landmarks(scan, template)
        self.lm_ids = np.array(
            [template.landmarks[n] for n in self.present], dtype=int
        )
        self.lm_scan = scan.landmark_array(self.present)
        self.frame = _ScanFrame(seed, self.lm_scan.mean(axis=0))
        n = template.n_vertices
        stride = max(1, n // cfg.correspondence_samples)
        self.fwd_sample = np.arange(0, n, stride)
        ns = scan.mesh.n_vertices
        stride_s = max(1, ns // cfg.correspondence_samples)
        self.bwd_sample = np.arange(0, ns, stride_s)
        self.scan_vnormals = vertex_normals(scan.mesh)
        self.scan_fnormals = face_normals(scan.mesh)
        self.scan_index = SurfaceIndex(scan.mesh)
        ext = scan.mesh.vertices.max(axis=0) - scan.mesh.vertices.min(axis=0)
        self.scan_diag = float(np.linalg.norm(ext))
        self.gate_cos = float(np.cos(np.deg2rad(cfg.normal_gate_deg)))
        self.limits = joint_limits(template, cfg.joint_limit_table)
        self.proxies = []
        for (na, nb), (ra, rb) in cfg.collision_proxies:
            try:
                self.proxies.append(
                    (template.joint_index(na), template.joint_index(nb),
                     float(ra), float(rb))
                )
            except ConfigError:
                continue  # template without these joints: proxy pair inactive

    def associate(self, x: np.ndarray) -> _Correspondences:
        """Re-establish closest-point pairs for parameters x (ICP-style)."""
        u, pose = self._split(x)
        res = lbs_forward_full(self.template, pose)
        model = res.mesh
        model_vn = vertex_normals(model)
        model_fn = face_normals(model)
        rot = self.frame.seed.rotation

        # model vertices -> scan surface, queried in the scan frame (the
        # similarity map preserves nearest neighbors)
        q = self.frame.inverse_apply(model.vertices[self.fwd_sample], u)
        hit = self.scan_index.query(q)
        scan_n_model = self.scan_fnormals[hit.triangles] @ rot.T
        fwd_mask = (
            np.einsum("ij,ij->i", model_vn[self.fwd_sample], scan_n_model)
            >= self.gate_cos
        )

        # scan samples -> model surface, queried in the model frame
        p_model = self.frame.apply(self.scan.mesh.vertices[self.bwd_sample], u)
        hit_b = closest_surface_points(p_model, model)
        scan_n = self.scan_vnormals[self.bwd_sample] @ rot.T
        bwd_mask = (
            np.einsum("ij,ij->i", scan_n, model_fn[hit_b.triangles])
            >= self.gate_cos
        )
        return _Correspondences(
            fwd_ids=self.fwd_sample,
            fwd_targets=hit.points,
            fwd_normals=self.scan_fnormals[hit.triangles],
            fwd_mask=fwd_mask,
            bwd_points=self.scan.mesh.vertices[self.bwd_sample],
            bwd_vert_ids=model.faces[hit_b.triangles],
            bwd_bary=hit_b.barycentric,
            bwd_normals=model_fn[hit_b.triangles],
            bwd_mask=bwd_mask,
        )

    def _split(self, x) -> Tuple[float, Pose]:
        return float(x[0]), Pose.from_vector(x[1:], self.template.n_joints)

    # ---- loss -----------------------------------------------------------

    def loss(self, x, corr: _Correspondences, terms_enabled=None,
             want_grad=True, weight_override=None):
        """Total weighted loss, per-term breakdown, and optional gradient."""
        cfg = self.cfg
        u, pose = self._split(x)
        res = lbs_forward_full(self.template, pose)
        v = res.mesh.vertices
        weights = weight_override or cfg.weights()
        enabled = set(terms_enabled or POSE_TERMS)
        terms: Dict[str, float] = {}
        rows_w: List[np.ndarray] = []
        rows_vs: List[np.ndarray] = []
        rows_g: List[np.ndarray] = []
        du = 0.0

        def add_rows(w, vs, g):
            rows_w.append(np.atleast_2d(w))
            rows_vs.append(np.atleast_2d(vs))
            rows_g.append(np.atleast_2d(g))

        # landmark
        if "landmark" in enabled and len(self.lm_ids):
            targets = self.frame.apply(self.lm_scan, u)
            r = v[self.lm_ids] - targets
            terms["landmark"] = float((r**2).sum() / len(r)) * MM2
            if want_grad:
                g = (2.0 * MM2 / len(r)) * r
                add_rows(self.template.weights[self.lm_ids],
                         res.shaped_vertices[self.lm_ids], weights["landmark"] * g)
                du += weights["landmark"] * float(
                    -np.einsum("ij,ij->", g, targets - self.frame.c_model)
                )
        else:
            terms["landmark"] = 0.0

        # correspondence (point-to-plane on frozen pairs)
        if "correspondence" in enabled and corr is not None and corr.count:
            rot = self.frame.seed.rotation
            fwd_t = self.frame.apply(corr.fwd_targets, u)
            nf = corr.fwd_normals @ rot.T
            sf = np.einsum("ij,ij->i", v[corr.fwd_ids] - fwd_t, nf)
            sf = sf * corr.fwd_mask
            qb = np.einsum("kc,kcd->kd", corr.bwd_bary, v[corr.bwd_vert_ids])
            pb = self.frame.apply(corr.bwd_points, u)
            nb = corr.bwd_normals
            sb = np.einsum("ij,ij->i", pb - qb, nb) * corr.bwd_mask
            total = float((sf**2).sum() + (sb**2).sum())
            terms["correspondence"] = total / corr.count * MM2
            if want_grad:
                scale_f = 2.0 * MM2 / corr.count
                gf = scale_f * sf[:, None] * nf
                add_rows(self.template.weights[corr.fwd_ids],
                         res.shaped_vertices[corr.fwd_ids],
                         weights["correspondence"] * gf)
                du += weights["correspondence"] * float(
                    -np.einsum("ij,ij->", gf, fwd_t - self.frame.c_model)
                )
                gb = scale_f * sb[:, None] * nb  # d/dq = -gb via barycentrics
                for k in range(3):
                    ids_k = corr.bwd_vert_ids[:, k]
                    add_rows(
                        self.template.weights[ids_k],
                        res.shaped_vertices[ids_k],
                        weights["correspondence"]
                        * (-gb * corr.bwd_bary[:, k][:, None]),
                    )
                du += weights["correspondence"] * float(
                    np.einsum("ij,ij->", gb, pb - self.frame.c_model)
                )
        else:
            terms["correspondence"] = 0.0

        # collision
        if "collision" in enabled and self.proxies:
            total = 0.0
            pts = res.joint_transforms[:, :3, 3] + np.einsum(
                "jab,jb->ja", res.joint_transforms[:, :3, :3], res.rest_joints
            )
            for ja, jb, ra, rb in self.proxies:
                delta = pts[ja] - pts[jb]
                dist = float(np.linalg.norm(delta))
                pen = ra + rb - dist
                if pen > 0 and dist > 1e-12:
                    total += pen**2 * MM2
                    if want_grad:
                        g = (-2.0 * MM2 * pen / dist) * delta
                        wa = np.zeros(self.template.n_joints)
                        wa[ja] = 1.0
                        wb = np.zeros(self.template.n_joints)
                        wb[jb] = 1.0
                        add_rows(wa, res.rest_joints[ja], weights["collision"] * g)
                        add_rows(wb, res.rest_joints[jb], -weights["collision"] * g)
            terms["collision"] = total
        else:
            terms["collision"] = 0.0

        # pose regularization (root excluded from the magnitude prior)
        if "pose_reg" in enabled:
            ang = np.linalg.norm(pose.joint_rotations, axis=1)
            root = self.template.root
            lim = np.delete(self.limits, root)
            hinge = np.maximum(0.0, ang - lim)
            terms["pose_reg"] = float((ang**2).sum() + (hinge**2).sum())
        else:
            terms["pose_reg"] = 0.0

        # scale consistency (bounding-box diagonal log-ratio)
        if "scale" in enabled:
            hi = v.max(axis=0)
            lo = v.min(axis=0)
            diag_m = float(np.linalg.norm(hi - lo))
            diag_s = self.frame.seed.scale * np.exp(u) * self.scan_diag
            log_ratio = np.log(diag_m) - np.log(diag_s)
            terms["scale"] = float(log_ratio**2)
            if want_grad:
                du += weights["scale"] * float(-2.0 * log_ratio)
                coef = 2.0 * log_ratio / (diag_m**2)
                d = hi - lo
                hi_ids = np.argmax(v, axis=0)
                lo_ids = np.argmin(v, axis=0)
                for axis in range(3):
                    for vid, sign in ((hi_ids[axis], 1.0), (lo_ids[axis], -1.0)):
                        g = np.zeros(3)
                        g[axis] = coef * sign * d[axis]
                        add_rows(self.template.weights[vid],
                                 res.shaped_vertices[vid], weights["scale"] * g)
        else:
            terms["scale"] = 0.0

        for name, val in terms.items():
            if not np.isfinite(val):
                raise NaNLossError(name)
        total = sum(weights[k] * terms[k] for k in terms)

        grad = None
        if want_grad:
            grad = np.zeros_like(np.asarray(x, dtype=float))
            grad[0] = du if cfg.refine_scale else 0.0
            jac = PoseJacobian(res.rest_joints, self.template.parents, pose)
            if rows_w:
                grad[1:] += pose_pullback(
                    jac,
                    np.concatenate(rows_w),
                    np.concatenate(rows_vs),
                    np.concatenate(rows_g),
                )
            if "pose_reg" in enabled and weights["pose_reg"] > 0:
                ang = np.linalg.norm(pose.joint_rotations, axis=1)
                root = self.template.root
                lim = np.delete(self.limits, root)
                hinge = np.maximum(0.0, ang - lim)
                coef = 2.0 + np.where(
                    (hinge > 0) & (ang > 1e-12), 2.0 * hinge / np.maximum(ang, 1e-12), 0.0
                )
                g_jr = coef[:, None] * pose.joint_rotations
                grad_pose = np.zeros(6 + 3 * (self.template.n_joints - 1))
                grad_pose[6:] = (weights["pose_reg"] * g_jr).ravel()
                grad[1:] += grad_pose
        return total, terms, grad


    # ---- linearization for damped Gauss-Newton -----------------------------

    def linearize(self, x, corr: _Correspondences | None, terms_enabled=None,
                  weight_override=None):
        """Weighted residual stack and its Jacobian at x.

        Residuals are scaled so that sum(r^2) equals the weighted total loss
        of the enabled terms (hinge terms enter through their active set).
        """
        cfg = self.cfg
        u, pose = self._split(x)
        res = lbs_forward_full(self.template, pose)
        v = res.mesh.vertices
        jac = PoseJacobian(res.rest_joints, self.template.parents, pose)
        weights = weight_override or cfg.weights()
        enabled = set(terms_enabled or POSE_TERMS)
        p_dim = len(x)
        r_blocks: List[np.ndarray] = []
        j_blocks: List[np.ndarray] = []

        def block(point_w, point_vs, resid, w_scalar, du_col=None, bary=None):
            """Residual rows resid (n,3) tied to LBS points; optional scan-
            side u column and barycentric contraction."""
            jp = lbs_point_jacobian(jac, point_w, point_vs)
            if bary is not None:
                jp = np.einsum("kc,kcap->kap", bary, jp.reshape(len(resid), 3, 3, -1))
                jp = -jp  # residual is target - model point
            rows = np.sqrt(w_scalar) * resid
            jj = np.sqrt(w_scalar) * jp
            full = np.zeros((len(resid), 3, p_dim))
            full[:, :, 1:] = jj
            if du_col is not None:
                full[:, :, 0] = np.sqrt(w_scalar) * du_col
            r_blocks.append(rows.reshape(-1))
            j_blocks.append(full.reshape(-1, p_dim))

        if "landmark" in enabled and len(self.lm_ids):
            targets = self.frame.apply(self.lm_scan, u)
            resid = v[self.lm_ids] - targets
            w = weights["landmark"] * MM2 / len(resid)
            block(
                self.template.weights[self.lm_ids],
                res.shaped_vertices[self.lm_ids],
                resid,
                w,
                du_col=-(targets - self.frame.c_model),
            )

        if "correspondence" in enabled and corr is not None and corr.count:
            w = weights["correspondence"] * MM2 / corr.count
            rot = self.frame.seed.rotation
            sel = corr.fwd_mask
            if sel.any():
                ids = corr.fwd_ids[sel]
                targets = self.frame.apply(corr.fwd_targets[sel], u)
                nf = corr.fwd_normals[sel] @ rot.T
                s = np.einsum("ij,ij->i", v[ids] - targets, nf)
                jp = lbs_point_jacobian(
                    jac, self.template.weights[ids], res.shaped_vertices[ids]
                )
                jrow = np.einsum("na,nap->np", nf, jp)
                full = np.zeros((len(ids), p_dim))
                full[:, 1:] = np.sqrt(w) * jrow
                full[:, 0] = np.sqrt(w) * -np.einsum(
                    "ij,ij->i", nf, targets - self.frame.c_model
                )
                r_blocks.append(np.sqrt(w) * s)
                j_blocks.append(full)
            selb = corr.bwd_mask
            if selb.any():
                ids3 = corr.bwd_vert_ids[selb].reshape(-1)
                bary = corr.bwd_bary[selb]
                pb = self.frame.apply(corr.bwd_points[selb], u)
                qb = np.einsum(
                    "kc,kcd->kd", bary, v[corr.bwd_vert_ids[selb]]
                )
                nb = corr.bwd_normals[selb]
                s = np.einsum("ij,ij->i", pb - qb, nb)
                jp = lbs_point_jacobian(
                    jac, self.template.weights[ids3], res.shaped_vertices[ids3]
                ).reshape(len(bary), 3, 3, p_dim - 1)
                jq = np.einsum("kc,kcap->kap", bary, jp)
                jrow = -np.einsum("ka,kap->kp", nb, jq)
                full = np.zeros((len(bary), p_dim))
                full[:, 1:] = np.sqrt(w) * jrow
                full[:, 0] = np.sqrt(w) * np.einsum(
                    "ij,ij->i", nb, pb - self.frame.c_model
                )
                r_blocks.append(np.sqrt(w) * s)
                j_blocks.append(full)

        if "collision" in enabled and self.proxies:
            pts = res.joint_transforms[:, :3, 3] + np.einsum(
                "jab,jb->ja", res.joint_transforms[:, :3, :3], res.rest_joints
            )
            for ja, jb, ra, rb in self.proxies:
                delta = pts[ja] - pts[jb]
                dist = float(np.linalg.norm(delta))
                pen = ra + rb - dist
                if pen > 0 and dist > 1e-12:
                    onehot = np.zeros((2, self.template.n_joints))
                    onehot[0, ja] = 1.0
                    onehot[1, jb] = 1.0
                    jp = lbs_point_jacobian(
                        jac, onehot, res.rest_joints[[ja, jb]]
                    )
                    w = weights["collision"] * MM2
                    drow = (-(delta / dist) @ (jp[0] - jp[1]))
                    full = np.zeros(p_dim)
                    full[1:] = np.sqrt(w) * drow
                    r_blocks.append(np.array([np.sqrt(w) * pen]))
                    j_blocks.append(full[None, :])

        if "pose_reg" in enabled and weights["pose_reg"] > 0:
            w = np.sqrt(weights["pose_reg"])
            n_nr = self.template.n_joints - 1
            rows = w * pose.joint_rotations.reshape(-1)
            full = np.zeros((3 * n_nr, p_dim))
            full[:, 7:] = w * np.eye(3 * n_nr)
            r_blocks.append(rows)
            j_blocks.append(full)
            ang = np.linalg.norm(pose.joint_rotations, axis=1)
            root = self.template.root
            lim = np.delete(self.limits, root)
            active = np.flatnonzero((ang > lim) & (ang > 1e-12))
            for a in active:
                rdir = pose.joint_rotations[a] / ang[a]
                full = np.zeros(p_dim)
                full[7 + 3 * a : 10 + 3 * a] = w * rdir
                r_blocks.append(np.array([w * (ang[a] - lim[a])]))
                j_blocks.append(full[None, :])

        if "scale" in enabled and weights["scale"] > 0:
            hi = v.max(axis=0)
            lo = v.min(axis=0)
            diag_m = float(np.linalg.norm(hi - lo))
            diag_s = self.frame.seed.scale * np.exp(u) * self.scan_diag
            log_ratio = np.log(diag_m) - np.log(diag_s)
            w = np.sqrt(weights["scale"])
            hi_ids = np.argmax(v, axis=0)
            lo_ids = np.argmin(v, axis=0)
            ids = np.concatenate([hi_ids, lo_ids])
            jp = lbs_point_jacobian(
                jac, self.template.weights[ids], res.shaped_vertices[ids]
            )
            d = hi - lo
            row = np.zeros(p_dim)
            for axis in range(3):
                coef = d[axis] / (diag_m**2)
                row[1:] += coef * jp[axis, axis, :]
                row[1:] -= coef * jp[3 + axis, axis, :]
            row[0] = -1.0
            r_blocks.append(np.array([w * log_ratio]))
            j_blocks.append(w * row[None, :])

        r_all = np.concatenate(r_blocks) if r_blocks else np.zeros(0)
        j_all = np.concatenate(j_blocks) if j_blocks else np.zeros((0, p_dim))
        if not cfg.refine_scale and j_all.size:
            j_all[:, 0] = 0.0
        return r_all, j_all

    def gauss_newton(self, x0, corr, terms_enabled=None, max_iterations=20,
                     tolerance=1e-10, weight_override=None):
        """Levenberg-style damped Gauss-Newton on the frozen system.

        Accepted steps strictly decrease the frozen loss; returns
        (x, accepted_losses).
        """
        x = np.asarray(x0, dtype=float).copy()

        def frozen_loss(xx):
            total, _, _ = self.loss(xx, corr, terms_enabled, want_grad=False,
                                    weight_override=weight_override)
            return total

        loss = frozen_loss(x)
        accepted = [loss]
        mu = 1e-4
        for _ in range(max_iterations):
            r, j = self.linearize(x, corr, terms_enabled, weight_override)
            if not len(r):
                break
            jtj = j.T @ j
            jtr = j.T @ r
            scale = max(float(np.trace(jtj)) / jtj.shape[0], 1e-12)
            eye = np.eye(jtj.shape[0])
            improved = False
            for _ in range(12):
                try:
                    delta = np.linalg.solve(jtj + mu * scale * eye, -jtr)
                except np.linalg.LinAlgError:
                    mu *= 10.0
                    continue
                cand = x + delta
                cand_loss = frozen_loss(cand)
                if np.isfinite(cand_loss) and cand_loss < loss:
                    x, loss = cand, cand_loss
                    accepted.append(loss)
                    mu = max(mu / 10.0, 1e-12)
                    improved = True
                    break
                mu *= 6.0
            if not improved:
                break
            if len(accepted) >= 2 and (
                accepted[-2] - accepted[-1]
                <= tolerance * max(1.0, abs(accepted[-2]))
            ):
                break
        return x, accepted


def pose_fit_loss(template, scan: Scan, pose: Pose, rigid: RigidTransform,
                  cfg: PoseFitConfig | None = None):
    """Five-term loss with fresh correspondences; returns (total, breakdown)."""
    cfg = cfg or PoseFitConfig()
    state = PoseFitState(template, scan, cfg, rigid)
    x = np.concatenate([[0.0], pose.as_vector()])
    corr = state.associate(x)
    total, terms, _ = state.loss(x, corr, want_grad=False)
    return total, terms


def fit_pose(template, scan: Scan, cfg: PoseFitConfig | None = None,
             seed: RigidTransform | None = None):
    """Optimize pose and refined scan scale. Returns (pose, rigid, report).

    `report` carries the per-epoch loss history and final term breakdown.
    """
    cfg = cfg or PoseFitConfig()
    if seed is None:
        tpl_lm = template.landmark_positions()
        present = check_scan_landmarks(scan, template)
        ids = [template.landmark_names.index(n) for n in present]
        seed = procrustes_align(scan.landmark_array(present), tpl_lm[ids])
    state = PoseFitState(template, scan, cfg, seed)
    x0 = np.concatenate([[0.0], Pose.zero(template.n_joints).as_vector()])

    _, seed_terms, _ = state.loss(x0, None, terms_enabled=("landmark",),
                                  want_grad=False)
    seed_landmark = seed_terms["landmark"]

    history: List[dict] = []

    # stage 1: landmark + regularizer warm start (no surface terms)
    x, warm_hist = state.gauss_newton(
        x0, None,
        terms_enabled=("landmark", "pose_reg"),
        max_iterations=cfg.landmark_stage_iterations,
        tolerance=1e-9,
    )
    history.append({"stage": "landmark", "accepted": warm_hist})

    # stage 2: full loss with per-epoch correspondence refresh
    epoch_losses: List[float] = []
    iters_used = 0
    while iters_used < cfg.max_iterations:
        corr = state.associate(x)
        x, acc = state.gauss_newton(
            x, corr,
            max_iterations=cfg.epoch_iterations,
            tolerance=cfg.convergence_tolerance * 1e-2,
        )
        iters_used += max(len(acc) - 1, 1)
        total, terms, _ = state.loss(x, corr, want_grad=False)
        epoch_losses.append(total)
        history.append({"epoch_loss": total, "accepted": acc,
                        **{f"term_{k}": v for k, v in terms.items()}})
        p = cfg.divergence_patience
        if len(epoch_losses) > p and epoch_losses[-1] > epoch_losses[-1 - p] * (
            1.0 + 1e-9
        ):
            raise FitError(
                "pose fit diverged: epoch loss increased over the patience window",
                {"epoch_losses": epoch_losses[-p - 1:]},
            )
        if len(epoch_losses) >= 2:
            drop = epoch_losses[-2] - epoch_losses[-1]
            if drop <= cfg.convergence_tolerance * max(1.0, abs(epoch_losses[-2])):
                break
        if len(acc) <= 1:
            break

    # stage 3: collapse data-indifferent directions, then an annealed pass
    # where the data terms dominate the (biasing) pose prior
    if cfg.detangle_boost > 1.0 and cfg.lambda_pose_reg > 0:
        boosted = cfg.weights()
        boosted["pose_reg"] *= cfg.detangle_boost
        corr = state.associate(x)
        x, acc = state.gauss_newton(
            x, corr,
            max_iterations=cfg.detangle_iterations,
            tolerance=1e-8,
            weight_override=boosted,
        )
        history.append({"stage": "detangle", "accepted": acc})
    if cfg.anneal_factor < 1.0:
        annealed = cfg.weights()
        annealed["pose_reg"] *= cfg.anneal_factor
        for _ in range(2):
            corr = state.associate(x)
            x, acc = state.gauss_newton(
                x, corr,
                max_iterations=cfg.anneal_iterations,
                tolerance=cfg.convergence_tolerance * 1e-3,
                weight_override=annealed,
            )
            history.append({"stage": "anneal", "accepted": acc})

    u, pose = state._split(x)
    final_landmark = state.loss(x, None, terms_enabled=("landmark",),
                                want_grad=False)[1]["landmark"]
    if final_landmark > seed_landmark and seed_landmark > 1e-12:
        raise FitError(
            "pose fit failed to improve on the Procrustes landmark residual",
            {"seed": seed_landmark, "final": final_landmark},
        )
    rigid = state.frame.rigid(u)
    report = {
        "epochs": history,
        "seed_landmark": seed_landmark,
        "final_landmark": final_landmark,
        "iterations": iters_used,
    }
    return pose, rigid, report
