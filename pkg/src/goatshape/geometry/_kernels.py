"""Numba kernels for exact point-to-triangle closest-point queries."""

import numpy as np
from numba import njit


@njit(inline="always")
def _closest_pt(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Closest point on triangle (a, b, c) to p, by Voronoi-region tests."""
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz
    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (
        ax + abx * v + acx * w,
        ay + aby * v + acy * w,
        az + abz * v + acz * w,
    )


@njit(cache=True)
def closest_points_brute(points, verts, faces):
    """Exhaustive closest surface point for each query; ties keep the lowest
    triangle index (strict < comparison in index order)."""
    n = points.shape[0]
    out_pt = np.empty((n, 3))
    out_tri = np.full(n, -1, np.int64)
    out_d2 = np.empty(n)
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        bx = by = bz = 0.0
        bt = -1
        for t in range(faces.shape[0]):
            ia, ib, ic = faces[t, 0], faces[t, 1], faces[t, 2]
            qx, qy, qz = _closest_pt(
                px, py, pz,
                verts[ia, 0], verts[ia, 1], verts[ia, 2],
                verts[ib, 0], verts[ib, 1], verts[ib, 2],
                verts[ic, 0], verts[ic, 1], verts[ic, 2],
            )
            d2 = (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
            if d2 < best:
                best = d2
                bt = t
                bx, by, bz = qx, qy, qz
        out_pt[i, 0], out_pt[i, 1], out_pt[i, 2] = bx, by, bz
        out_tri[i] = bt
        out_d2[i] = best
    return out_pt, out_tri, out_d2


@njit(cache=True)
def closest_points_candidates(points, verts, faces, cand, offsets):
    """Closest surface point restricted to per-query candidate triangles.

    `cand[offsets[i]:offsets[i+1]]` lists (sorted ascending) candidate
    triangle indices for query i; the caller guarantees the true nearest
    triangle is among them.
    """
    n = points.shape[0]
    out_pt = np.empty((n, 3))
    out_tri = np.full(n, -1, np.int64)
    out_d2 = np.empty(n)
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        bx = by = bz = 0.0
        bt = -1
        for k in range(offsets[i], offsets[i + 1]):
            t = cand[k]
            ia, ib, ic = faces[t, 0], faces[t, 1], faces[t, 2]
            qx, qy, qz = _closest_pt(
                px, py, pz,
                verts[ia, 0], verts[ia, 1], verts[ia, 2],
                verts[ib, 0], verts[ib, 1], verts[ib, 2],
                verts[ic, 0], verts[ic, 1], verts[ic, 2],
            )
            d2 = (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
            if d2 < best:
                best = d2
                bt = t
                bx, by, bz = qx, qy, qz
        out_pt[i, 0], out_pt[i, 1], out_pt[i, 2] = bx, by, bz
        out_tri[i] = bt
        out_d2[i] = best
    return out_pt, out_tri, out_d2
