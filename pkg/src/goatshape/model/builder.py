"""Procedural template construction.

Builds a watertight goat-like quadruped as the zero level set of a smooth
union of bone capsules (marching cubes), refines it with loop subdivision,
then derives skinning weights, a joint regressor, 32 landmarks, and the six
measurement keypoint rings from the same skeleton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay, QhullError
from skimage import measure as _sk_measure

from ..errors import ConfigError
from ..geometry.mesh import Mesh, REGION_IDS
from ..geometry.subdivision import loop_subdivide
from .template import Template


@dataclass(frozen=True)
class TemplateBuildConfig:
    """Body proportions (meters) and meshing controls."""

    trunk_length: float = 0.78  # pelvis-to-withers span along x
    trunk_radius: float = 0.17
    trunk_height: float = 0.56  # spine height above ground
    neck_length: float = 0.34
    head_size: float = 0.09
    leg_length: float = 0.50
    stance_width: float = 0.13
    tail_length: float = 0.17
    ear_length: float = 0.095
    udder_radius: float = 0.085
    smooth_k: float = 0.025
    target_vertices: int = 13815
    vertex_tolerance: float = 0.10
    subdivision_levels: int = 1
    seed_cell: float = 0.021  # initial marching-cubes cell size


# joint skeleton: (name, parent name, region)
_JOINT_DEFS = [
    ("pelvis", None, "torso"),
    ("spine_lumbar", "pelvis", "torso"),
    ("spine_mid", "spine_lumbar", "torso"),
    ("spine_thoracic", "spine_mid", "torso"),
    ("withers", "spine_thoracic", "torso"),
    ("chest", "spine_thoracic", "torso"),
    ("neck_base", "withers", "head"),
    ("neck_mid", "neck_base", "head"),
    ("neck_top", "neck_mid", "head"),
    ("head", "neck_top", "head"),
    ("snout", "head", "head"),
    ("jaw", "head", "head"),
    ("ear_left", "head", "head"),
    ("ear_right", "head", "head"),
    ("tail_base", "pelvis", "other"),
    ("tail_mid", "tail_base", "other"),
    ("tail_tip", "tail_mid", "other"),
    ("shoulder_left", "withers", "legs"),
    ("elbow_left", "shoulder_left", "legs"),
    ("knee_front_left", "elbow_left", "legs"),
    ("pastern_front_left", "knee_front_left", "legs"),
    ("hoof_front_left", "pastern_front_left", "legs"),
    ("shoulder_right", "withers", "legs"),
    ("elbow_right", "shoulder_right", "legs"),
    ("knee_front_right", "elbow_right", "legs"),
    ("pastern_front_right", "knee_front_right", "legs"),
    ("hoof_front_right", "pastern_front_right", "legs"),
    ("hip_left", "pelvis", "legs"),
    ("stifle_left", "hip_left", "legs"),
    ("hock_left", "stifle_left", "legs"),
    ("pastern_hind_left", "hock_left", "legs"),
    ("hoof_hind_left", "pastern_hind_left", "legs"),
    ("hip_right", "pelvis", "legs"),
    ("stifle_right", "hip_right", "legs"),
    ("hock_right", "stifle_right", "legs"),
    ("pastern_hind_right", "hock_right", "legs"),
    ("hoof_hind_right", "pastern_hind_right", "legs"),
    ("udder_front", "pelvis", "other"),
    ("udder_rear", "udder_front", "other"),
    ("teat_left", "udder_rear", "other"),
    ("teat_right", "udder_rear", "other"),
]

JOINT_NAMES = tuple(d[0] for d in _JOINT_DEFS)
JOINT_REGIONS = {d[0]: d[2] for d in _JOINT_DEFS}
PARENT_NAMES = {d[0]: d[1] for d in _JOINT_DEFS}


def _skeleton(cfg: TemplateBuildConfig):
    """Joint positions (M,3) and parent index array for the config."""
    L, zs, R = cfg.trunk_length, cfg.trunk_height, cfg.trunk_radius
    neck, leg, stance = cfg.neck_length, cfg.leg_length, cfg.stance_width
    hoof_z = 0.035
    x_front = L / 2 - 0.03
    x_hind = -L / 2 + 0.02

    def leg_chain(x, side, hind):
        top_z = zs - 0.05
        drop = top_z - hoof_z
        y = side * (stance + (0.01 if hind else 0.0))
        bend = -1.0 if hind else 1.0
        return [
            (x, y, top_z),
            (x - bend * 0.015 - (0.03 if hind else 0.02), y, top_z - 0.34 * drop),
            (x - (0.06 if hind else 0.03), y, top_z - 0.62 * drop),
            (x - (0.035 if hind else 0.03), y, top_z - 0.87 * drop),
            (x - (0.04 if hind else 0.03), y, hoof_z),
        ]

    head = np.array([L / 2 + 0.10 + 0.74 * neck, 0, zs + 0.10 + 1.04 * neck])
    pos = {
        "pelvis": (-L / 2, 0, zs),
        "spine_lumbar": (-L / 4, 0, zs + 0.02),
        "spine_mid": (0.0, 0, zs + 0.035),
        "spine_thoracic": (L / 4, 0, zs + 0.035),
        "withers": (L / 2, 0, zs + 0.05),
        "chest": (L / 2 - 0.11, 0, zs - 0.55 * R),
        "neck_base": (L / 2 + 0.10, 0, zs + 0.10),
        "neck_mid": (L / 2 + 0.10 + 0.33 * neck, 0, zs + 0.10 + 0.46 * neck),
        "neck_top": (L / 2 + 0.10 + 0.55 * neck, 0, zs + 0.10 + 0.78 * neck),
        "head": tuple(head),
        "snout": tuple(head + [0.115, 0, -0.045]),
        "jaw": tuple(head + [0.07, 0, -0.075]),
        "ear_left": tuple(head + [-0.02, 0.065, 0.055]),
        "ear_right": tuple(head + [-0.02, -0.065, 0.055]),
        "tail_base": (-L / 2 - 0.085, 0, zs + 0.03),
        "tail_mid": (
            -L / 2 - 0.085 - 0.45 * cfg.tail_length,
            0,
            zs + 0.03 - 0.35 * cfg.tail_length,
        ),
        "tail_tip": (
            -L / 2 - 0.085 - 0.85 * cfg.tail_length,
            0,
            zs + 0.03 - 0.85 * cfg.tail_length,
        ),
        "udder_front": (x_hind + 0.15, 0, zs - R + 0.015),
        "udder_rear": (x_hind + 0.045, 0, zs - R - 0.045),
        "teat_left": (x_hind + 0.065, 0.045, zs - R - 0.045 - 0.075),
        "teat_right": (x_hind + 0.065, -0.045, zs - R - 0.045 - 0.075),
    }
    for prefix, x, hind in (("front", x_front, False), ("hind", x_hind, True)):
        for side_name, side in (("left", 1.0), ("right", -1.0)):
            chain = leg_chain(x, side, hind)
            if prefix == "front":
                names = [
                    f"shoulder_{side_name}",
                    f"elbow_{side_name}",
                    f"knee_front_{side_name}",
                    f"pastern_front_{side_name}",
                    f"hoof_front_{side_name}",
                ]
            else:
                names = [
                    f"hip_{side_name}",
                    f"stifle_{side_name}",
                    f"hock_{side_name}",
                    f"pastern_hind_{side_name}",
                    f"hoof_hind_{side_name}",
                ]
            for nm, p in zip(names, chain):
                pos[nm] = p

    joints = np.array([pos[n] for n in JOINT_NAMES], dtype=float)
    name_to_idx = {n: i for i, n in enumerate(JOINT_NAMES)}
    parents = np.array(
        [-1 if PARENT_NAMES[n] is None else name_to_idx[PARENT_NAMES[n]]
         for n in JOINT_NAMES],
        dtype=int,
    )
    return joints, parents


def _capsules(cfg: TemplateBuildConfig, joints, name_to_idx):
    """(p0, p1, radius) primitives defining the body surface."""
    R = cfg.trunk_radius
    j = lambda n: joints[name_to_idx[n]]
    caps = [
        ("pelvis", "spine_lumbar", 0.92 * R),
        ("spine_lumbar", "spine_mid", R),
        ("spine_mid", "spine_thoracic", R),
        ("spine_thoracic", "withers", 0.88 * R),
        ("spine_thoracic", "chest", 0.62 * R),
        ("withers", "neck_base", 0.45 * R),
        ("neck_base", "neck_mid", 0.075),
        ("neck_mid", "neck_top", 0.064),
        ("neck_top", "head", 0.07),
        ("head", "head", cfg.head_size),
        ("head", "snout", 0.048),
        ("head", "jaw", 0.05),
        ("tail_base", "tail_mid", 0.042),
        ("tail_mid", "tail_tip", 0.036),
        ("udder_front", "udder_rear", 0.07),
        ("udder_front", "udder_front", 0.8 * cfg.udder_radius),
        ("udder_rear", "udder_rear", cfg.udder_radius),
        ("udder_rear", "teat_left", 0.034),
        ("udder_rear", "teat_right", 0.034),
        ("teat_left", "teat_left", 0.035),
        ("teat_right", "teat_right", 0.035),
    ]
    for side in ("left", "right"):
        caps += [
            ("withers", f"shoulder_{side}", 0.072),
            (f"shoulder_{side}", f"elbow_{side}", 0.062),
            (f"elbow_{side}", f"knee_front_{side}", 0.048),
            (f"knee_front_{side}", f"pastern_front_{side}", 0.038),
            (f"pastern_front_{side}", f"hoof_front_{side}", 0.034),
            (f"hoof_front_{side}", f"hoof_front_{side}", 0.037),
            ("pelvis", f"hip_{side}", 0.078),
            (f"hip_{side}", f"stifle_{side}", 0.068),
            (f"stifle_{side}", f"hock_{side}", 0.05),
            (f"hock_{side}", f"pastern_hind_{side}", 0.038),
            (f"pastern_hind_{side}", f"hoof_hind_{side}", 0.034),
            (f"hoof_hind_{side}", f"hoof_hind_{side}", 0.037),
        ]
        ear = j(f"ear_{side}")
        tip = ear + np.array([-0.015, np.sign(ear[1]) * 0.45, 0.82]) * cfg.ear_length
        caps.append((tuple(ear), tuple(tip), 0.032))
    out = []
    for a, b, r in caps:
        p0 = j(a) if isinstance(a, str) else np.asarray(a, float)
        p1 = j(b) if isinstance(b, str) else np.asarray(b, float)
        out.append((p0, p1, float(r)))
    return out


def _segment_distance(points, p0, p1):
    d = p1 - p0
    denom = float(d @ d)
    if denom < 1e-18:
        return np.linalg.norm(points - p0, axis=1)
    t = np.clip(((points - p0) @ d) / denom, 0.0, 1.0)
    return np.linalg.norm(points - (p0 + t[:, None] * d), axis=1)


def _sdf(points, capsules, k):
    val = np.full(len(points), 1e3)  # finite start keeps the smooth-min stable
    for p0, p1, r in capsules:
        d = _segment_distance(points, p0, p1) - r
        h = np.clip(0.5 + 0.5 * (val - d) / k, 0.0, 1.0)
        val = val + (d - val) * h - k * h * (1.0 - h)
    return val


def _march(cfg, capsules, cell):
    pts = np.array([p for c in capsules for p in (c[0], c[1])])
    rmax = max(c[2] for c in capsules)
    lo = pts.min(axis=0) - (rmax + 4 * cfg.smooth_k + 0.03)
    hi = pts.max(axis=0) + (rmax + 4 * cfg.smooth_k + 0.03)
    ns = np.maximum(np.ceil((hi - lo) / cell).astype(int) + 1, 8)
    axes = [lo[i] + cell * np.arange(ns[i]) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vol = _sdf(grid, capsules, cfg.smooth_k).reshape(ns)
    verts, faces, _, _ = _sk_measure.marching_cubes(vol, level=0.0,
                                                    spacing=(cell, cell, cell))
    verts = verts + lo
    # merge exact duplicates left by the triangulation
    uverts, inverse = np.unique(verts, axis=0, return_inverse=True)
    faces = inverse[faces]
    keep = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    faces = faces[keep]
    # drop unreferenced vertices
    used = np.zeros(len(uverts), dtype=bool)
    used[faces.ravel()] = True
    remap = np.cumsum(used) - 1
    return uverts[used], remap[faces]


def _signed_volume(verts, faces):
    v = verts[faces]
    return float(np.einsum("ij,ij->", v[:, 0], np.cross(v[:, 1], v[:, 2]))) / 6.0


def _check_surface(verts, faces, joints, capsules, k):
    mesh = Mesh(verts, faces)
    if not mesh.is_closed():
        raise ConfigError("base surface is not watertight; adjust proportions")
    e = mesh.edges()
    g = coo_matrix(
        (np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(len(verts), len(verts))
    )
    n_comp, _ = connected_components(g, directed=False)
    if n_comp != 1:
        raise ConfigError(
            f"base surface has {n_comp} components (self-intersecting or "
            "disconnected configuration)"
        )
    inside = _sdf(joints, capsules, k)
    if inside.max() > -1e-3:
        bad = int(np.argmax(inside))
        raise ConfigError(
            f"joint {JOINT_NAMES[bad]} lies outside the body surface"
        )


def _build_base_mesh(cfg, capsules, joints):
    """Marching cubes at a cell size tuned to the post-subdivision target."""
    lv = cfg.subdivision_levels
    base_target = (cfg.target_vertices - 2) / 4**lv + 2
    lo_n = (1 - cfg.vertex_tolerance) * base_target
    hi_n = (1 + cfg.vertex_tolerance) * base_target
    cell = cfg.seed_cell
    best = None
    for _ in range(12):
        verts, faces = _march(cfg, capsules, cell)
        n = len(verts)
        if lo_n <= n <= hi_n:
            best = (verts, faces)
            break
        cell = cell * np.sqrt(n / base_target)
        cell = float(np.clip(cell, 0.006, 0.06))
    if best is None:
        raise ConfigError(
            f"could not reach vertex budget near {base_target:.0f} "
            f"(last count {n})"
        )
    verts, faces = best
    if _signed_volume(verts, faces) < 0:
        faces = faces[:, ::-1]
    _check_surface(verts, faces, joints, capsules, cfg.smooth_k)
    return verts, faces


def _skinning_bones(joints, parents):
    """Per-joint geometry (segments / points) used for weight distances.

    Bone (j -> child) belongs to joint j; its start is pulled 22% toward the
    child so the ring of vertices around a joint binds to the parent bone,
    and bones ending at a leaf stop short so the leaf owns its cap.
    """
    m = len(joints)
    children = [[] for _ in range(m)]
    for c, p in enumerate(parents):
        if p >= 0:
            children[p].append(c)
    bones = [[] for _ in range(m)]
    for j in range(m):
        for c in children[j]:
            p0 = joints[j] + 0.22 * (joints[c] - joints[j])
            p1 = joints[c]
            if not children[c]:  # child is a leaf: leave it the cap
                p1 = joints[c] - 0.25 * (joints[c] - joints[j])
            bones[j].append((p0, p1))
        if not children[j]:
            bones[j].append((joints[j], joints[j]))
    return bones


def _skinning_weights(verts, joints, parents, top_k=4):
    m = len(joints)
    bones = _skinning_bones(joints, parents)
    dist = np.empty((len(verts), m))
    for j in range(m):
        dj = np.full(len(verts), np.inf)
        for p0, p1 in bones[j]:
            dj = np.minimum(dj, _segment_distance(verts, p0, p1))
        dist[:, j] = dj
    d0 = dist.min(axis=1, keepdims=True)
    tau = 0.35 * d0 + 0.012
    w = np.exp(-(dist**2 - d0**2) / (2.0 * tau**2))
    # keep the strongest top_k influences per vertex
    cut = np.partition(w, m - top_k, axis=1)[:, m - top_k, None]
    w[w < cut] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    return w


def _joint_regressor(verts, joints):
    n, m = len(verts), len(joints)
    reg = np.zeros((m, n))
    for j in range(m):
        order = np.argsort(np.linalg.norm(verts - joints[j], axis=1))
        found = False
        for k in (24, 48, 96, 192, 384, n):
            idx = order[: min(k, n)]
            try:
                tri = Delaunay(verts[idx])
            except QhullError:
                continue
            s = int(tri.find_simplex(joints[j]))
            if s < 0:
                continue
            t = tri.transform[s]
            b = t[:3] @ (joints[j] - t[3])
            bary = np.concatenate([b, [1.0 - b.sum()]])
            bary = np.clip(bary, 0.0, None)
            bary /= bary.sum()
            reg[j, idx[tri.simplices[s]]] = bary
            found = True
            break
        if not found:
            raise ConfigError(
                f"joint {JOINT_NAMES[j]} is outside the mesh hull; cannot "
                "build a convex regressor row"
            )
    return reg


def _nearest_vertex(verts, probe, exclude=()):
    order = np.argsort(np.linalg.norm(verts - np.asarray(probe, float), axis=1))
    for i in order:
        if int(i) not in exclude:
            return int(i)
    raise ConfigError("no vertex available for landmark probe")


def _landmarks(cfg, verts, joints, name_to_idx):
    j = lambda n: joints[name_to_idx[n]]
    R = cfg.trunk_radius
    probes = {
        "nose_tip": j("snout") + [0.10, 0, 0],
        "forehead": j("head") + [0, 0, 0.15],
        "chin": j("jaw") + [0.02, 0, -0.10],
        "throat": j("neck_base") + [0.04, 0, -0.15],
        "crest": j("neck_top") + [-0.02, 0, 0.12],
        "withers_top": j("withers") + [0, 0, R + 0.10],
        "back_mid_top": j("spine_mid") + [0, 0, R + 0.10],
        "rump_top": j("pelvis") + [0, 0, R + 0.10],
        "tail_base_top": j("tail_base") + [-0.01, 0, 0.09],
        "tail_tip": j("tail_tip") + [-0.06, 0, -0.03],
        "brisket": j("chest") + [0.10, 0, -0.06],
        "belly_low": j("spine_mid") + [0, 0, -(R + 0.10)],
    }
    for side, s in (("left", 1.0), ("right", -1.0)):
        ear = j(f"ear_{side}")
        tip = ear + np.array([-0.015, s * 0.45, 0.82]) * cfg.ear_length
        probes[f"ear_tip_{side}"] = tip + [0, s * 0.02, 0.03]
        probes[f"shoulder_point_{side}"] = j(f"shoulder_{side}") + [0.06, s * 0.10, 0]
        probes[f"elbow_{side}"] = j(f"elbow_{side}") + [0, s * 0.09, 0]
        probes[f"front_knee_{side}"] = j(f"knee_front_{side}") + [0, s * 0.07, 0]
        probes[f"front_hoof_{side}"] = j(f"hoof_front_{side}") + [0, s * 0.02, -0.06]
        probes[f"hip_point_{side}"] = j(f"hip_{side}") + [0, s * 0.11, 0.02]
        probes[f"stifle_{side}"] = j(f"stifle_{side}") + [0, s * 0.08, 0]
        probes[f"hock_{side}"] = j(f"hock_{side}") + [-0.07, s * 0.03, 0]
        probes[f"hind_hoof_{side}"] = j(f"hoof_hind_{side}") + [0, s * 0.02, -0.06]
    girth_x = j("withers")[0] - 0.12
    probes["chest_side_left"] = [girth_x, R + 0.10, j("spine_thoracic")[2] - 0.02]
    probes["chest_side_right"] = [girth_x, -(R + 0.10), j("spine_thoracic")[2] - 0.02]

    landmarks = {}
    taken = set()
    for name, probe in probes.items():
        vid = _nearest_vertex(verts, probe, exclude=taken)
        landmarks[name] = vid
        taken.add(vid)
    if len(landmarks) != 32:
        raise ConfigError(f"landmark table has {len(landmarks)} entries, expected 32")
    return landmarks, girth_x


def _girth_ring(verts, girth_x, center_yz, n_ring=12, slab=0.035):
    cand = np.flatnonzero(np.abs(verts[:, 0] - girth_x) < slab)
    if len(cand) < n_ring:
        raise ConfigError("girth plane slab contains too few vertices")
    y = verts[cand, 1] - center_yz[0]
    z = verts[cand, 2] - center_yz[1]
    ang = np.arctan2(z, y)
    ring = []
    for k in range(n_ring):
        target = -np.pi + (2 * np.pi * (k + 0.5)) / n_ring
        diff = np.abs((ang - target + np.pi) % (2 * np.pi) - np.pi)
        order = np.argsort(diff)
        for o in order:
            vid = int(cand[o])
            if vid not in ring:
                ring.append(vid)
                break
    if len(set(ring)) < 5:
        raise ConfigError("could not place at least 5 distinct girth keypoints")
    return ring


def build_procedural_template(cfg: TemplateBuildConfig | None = None) -> Template:
    """Build the default quadruped template per the configured proportions."""
    cfg = cfg or TemplateBuildConfig()
    if min(cfg.trunk_length, cfg.trunk_radius, cfg.leg_length) <= 0:
        raise ConfigError("proportions must be positive")
    joints, parents = _skeleton(cfg)
    name_to_idx = {n: i for i, n in enumerate(JOINT_NAMES)}
    capsules = _capsules(cfg, joints, name_to_idx)
    verts, faces = _build_base_mesh(cfg, capsules, joints)

    base = Mesh(verts, faces)
    final = loop_subdivide(base, cfg.subdivision_levels)
    lo = (1 - cfg.vertex_tolerance) * cfg.target_vertices
    hi = (1 + cfg.vertex_tolerance) * cfg.target_vertices
    if not lo <= final.n_vertices <= hi:
        raise ConfigError(
            f"final vertex count {final.n_vertices} outside "
            f"[{lo:.0f}, {hi:.0f}]"
        )

    # rest everything on the ground plane z = 0
    drop = final.vertices[:, 2].min()
    fverts = final.vertices - [0, 0, drop]
    joints = joints - [0, 0, drop]

    weights = _skinning_weights(fverts, joints, parents)
    weak = np.flatnonzero(weights.max(axis=0) <= 0.5)
    if len(weak):
        names = [JOINT_NAMES[i] for i in weak]
        raise ConfigError(f"joints without a dominant vertex (w>0.5): {names}")

    regressor = _joint_regressor(fverts, joints)
    rest_joints = regressor @ fverts  # exact by construction

    regions = np.array(
        [REGION_IDS[JOINT_REGIONS[JOINT_NAMES[jj]]]
         for jj in np.argmax(weights, axis=1)],
        dtype=np.int8,
    )
    mesh = Mesh(fverts, final.faces, regions)

    landmarks, girth_x = _landmarks(cfg, fverts, joints, name_to_idx)
    center_yz = (0.0, joints[name_to_idx["spine_thoracic"]][2] - 0.02)
    ring = _girth_ring(fverts, girth_x, center_yz)
    pin_bone = _nearest_vertex(fverts, joints[name_to_idx["tail_base"]] + [-0.10, 0, 0])
    keypoints = {
        "BL": [landmarks["brisket"], pin_bone],
        "BH": [landmarks["withers_top"]],
        "HH": [landmarks["rump_top"]],
        "CW": [landmarks["chest_side_left"], landmarks["chest_side_right"]],
        "HW": [landmarks["hip_point_left"], landmarks["hip_point_right"]],
        "CG": ring,
    }

    return Template(
        rest_mesh=mesh,
        joints=rest_joints,
        parents=parents,
        joint_names=JOINT_NAMES,
        weights=weights,
        joint_regressor=regressor,
        landmarks=landmarks,
        measurement_keypoints=keypoints,
    )
