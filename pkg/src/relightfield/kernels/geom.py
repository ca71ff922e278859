"""Ray/mesh intersection kernels: Moller-Trumbore triangles, stack-based BVH
traversal, point-to-surface distance. Hot paths; compiled with numba."""

from __future__ import annotations

import numpy as np

from ..accel import njit, prange

STACK_DEPTH = 64
INF = 1e30


@njit(cache=True)
def _tri_hit(v0, v1, v2, i, ox, oy, oz, dx, dy, dz, t_min, t_max):
    """Moller-Trumbore, two-sided. Returns (t, bu, bv); t < 0 on miss."""
    e1x = v1[i, 0] - v0[i, 0]
    e1y = v1[i, 1] - v0[i, 1]
    e1z = v1[i, 2] - v0[i, 2]
    e2x = v2[i, 0] - v0[i, 0]
    e2y = v2[i, 1] - v0[i, 1]
    e2z = v2[i, 2] - v0[i, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[i, 0]
    sy = oy - v0[i, 1]
    sz = oz - v0[i, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -1e-9 or u > 1.0 + 1e-9:
        return -1.0, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -1e-9 or u + v > 1.0 + 1e-9:
        return -1.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= t_min or t >= t_max:
        return -1.0, 0.0, 0.0
    return t, u, v


@njit(cache=True)
def _node_entry(node_min, node_max, n, ox, oy, oz, ix, iy, iz, t_min, t_max):
    """Ray/AABB slab test; entry distance or INF on miss."""
    t0 = (node_min[n, 0] - ox) * ix
    t1 = (node_max[n, 0] - ox) * ix
    if t0 > t1:
        t0, t1 = t1, t0
    lo = t0 if t0 > t_min else t_min
    hi = t1 if t1 < t_max else t_max
    t0 = (node_min[n, 1] - oy) * iy
    t1 = (node_max[n, 1] - oy) * iy
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > lo:
        lo = t0
    if t1 < hi:
        hi = t1
    t0 = (node_min[n, 2] - oz) * iz
    t1 = (node_max[n, 2] - oz) * iz
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > lo:
        lo = t0
    if t1 < hi:
        hi = t1
    if hi < lo:
        return INF
    return lo


@njit(cache=True)
def _inv_dir(d):
    if abs(d) > 1e-12:
        return 1.0 / d
    return 1e12 if d >= 0.0 else -1e12


@njit(cache=True)
def bvh_nearest(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2,
    ox, oy, oz, dx, dy, dz, t_min,
):
    """Nearest hit; returns (triangle index in BVH order or -1, t, bu, bv)."""
    ix = _inv_dir(dx)
    iy = _inv_dir(dy)
    iz = _inv_dir(dz)
    best_t = INF
    best_i = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(STACK_DEPTH, dtype=np.int32)
    top = 0
    if _node_entry(node_min, node_max, 0, ox, oy, oz, ix, iy, iz, t_min, best_t) < INF:
        stack[0] = 0
        top = 1
    while top > 0:
        top -= 1
        n = stack[top]
        if node_count[n] > 0:
            first = node_first[n]
            for k in range(first, first + node_count[n]):
                t, u, v = _tri_hit(v0, v1, v2, k, ox, oy, oz, dx, dy, dz, t_min, best_t)
                if t > 0.0:
                    best_t = t
                    best_i = k
                    best_u = u
                    best_v = v
        else:
            left = node_left[n]
            right = node_right[n]
            tl = _node_entry(node_min, node_max, left, ox, oy, oz, ix, iy, iz, t_min, best_t)
            tr = _node_entry(node_min, node_max, right, ox, oy, oz, ix, iy, iz, t_min, best_t)
            # push far child first so the near one is visited next
            if tl <= tr:
                if tr < INF:
                    stack[top] = right
                    top += 1
                if tl < INF:
                    stack[top] = left
                    top += 1
            else:
                if tl < INF:
                    stack[top] = left
                    top += 1
                if tr < INF:
                    stack[top] = right
                    top += 1
    return best_i, best_t, best_u, best_v


@njit(cache=True)
def bvh_occluded(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2,
    ox, oy, oz, dx, dy, dz, t_min, t_max,
):
    """True if any triangle lies in (t_min, t_max) along the ray."""
    ix = _inv_dir(dx)
    iy = _inv_dir(dy)
    iz = _inv_dir(dz)
    stack = np.empty(STACK_DEPTH, dtype=np.int32)
    top = 0
    if _node_entry(node_min, node_max, 0, ox, oy, oz, ix, iy, iz, t_min, t_max) < INF:
        stack[0] = 0
        top = 1
    while top > 0:
        top -= 1
        n = stack[top]
        if node_count[n] > 0:
            first = node_first[n]
            for k in range(first, first + node_count[n]):
                t, u, v = _tri_hit(v0, v1, v2, k, ox, oy, oz, dx, dy, dz, t_min, t_max)
                if t > 0.0:
                    return True
        else:
            left = node_left[n]
            right = node_right[n]
            if _node_entry(node_min, node_max, left, ox, oy, oz, ix, iy, iz, t_min, t_max) < INF:
                stack[top] = left
                top += 1
            if _node_entry(node_min, node_max, right, ox, oy, oz, ix, iy, iz, t_min, t_max) < INF:
                stack[top] = right
                top += 1
    return False


@njit(cache=True)
def shading_basis(
    v0, v1, v2, n0, n1, n2, uv0, uv1, uv2, k, bu, bv, dx, dy, dz
):
    """Interpolated hit attributes for triangle k at barycentrics (bu, bv).

    Returns (nx, ny, nz, gx, gy, gz, u, v): unit shading normal flipped to
    face the incoming ray, unit geometric normal flipped to the same side,
    and the interpolated UV.
    """
    w0 = 1.0 - bu - bv
    nx = w0 * n0[k, 0] + bu * n1[k, 0] + bv * n2[k, 0]
    ny = w0 * n0[k, 1] + bu * n1[k, 1] + bv * n2[k, 1]
    nz = w0 * n0[k, 2] + bu * n1[k, 2] + bv * n2[k, 2]
    ln = np.sqrt(nx * nx + ny * ny + nz * nz)
    if ln < 1e-20:
        ln = 1.0
    nx /= ln
    ny /= ln
    nz /= ln
    e1x = v1[k, 0] - v0[k, 0]
    e1y = v1[k, 1] - v0[k, 1]
    e1z = v1[k, 2] - v0[k, 2]
    e2x = v2[k, 0] - v0[k, 0]
    e2y = v2[k, 1] - v0[k, 1]
    e2z = v2[k, 2] - v0[k, 2]
    gx = e1y * e2z - e1z * e2y
    gy = e1z * e2x - e1x * e2z
    gz = e1x * e2y - e1y * e2x
    lg = np.sqrt(gx * gx + gy * gy + gz * gz)
    gx /= lg
    gy /= lg
    gz /= lg
    if nx * dx + ny * dy + nz * dz > 0.0:
        nx, ny, nz = -nx, -ny, -nz
    if gx * dx + gy * dy + gz * dz > 0.0:
        gx, gy, gz = -gx, -gy, -gz
    u = w0 * uv0[k, 0] + bu * uv1[k, 0] + bv * uv2[k, 0]
    v = w0 * uv0[k, 1] + bu * uv1[k, 1] + bv * uv2[k, 1]
    return nx, ny, nz, gx, gy, gz, u, v


@njit(cache=True)
def intersect_one(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2, n0, n1, n2, uv0, uv1, uv2,
    ox, oy, oz, dx, dy, dz, t_min, res,
):
    """Single-ray query. Fills res = [t, pos(3), shading n(3), geom n(3),
    uv(2)] and returns the BVH-order triangle index, or -1 on miss."""
    k, t, bu, bv = bvh_nearest(
        node_min, node_max, node_left, node_right, node_first, node_count,
        v0, v1, v2, ox, oy, oz, dx, dy, dz, t_min,
    )
    if k < 0:
        return -1
    nx, ny, nz, gx, gy, gz, u, v = shading_basis(
        v0, v1, v2, n0, n1, n2, uv0, uv1, uv2, k, bu, bv, dx, dy, dz
    )
    res[0] = t
    res[1] = ox + t * dx
    res[2] = oy + t * dy
    res[3] = oz + t * dz
    res[4] = nx
    res[5] = ny
    res[6] = nz
    res[7] = gx
    res[8] = gy
    res[9] = gz
    res[10] = u
    res[11] = v
    return k


@njit(cache=True, parallel=True)
def any_hit_batch(
    node_min, node_max, node_left, node_right, node_first, node_count,
    v0, v1, v2, origin, dirs, t_min,
):
    n = dirs.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in prange(n):
        k, t, bu, bv = bvh_nearest(
            node_min, node_max, node_left, node_right, node_first, node_count,
            v0, v1, v2,
            origin[0], origin[1], origin[2],
            dirs[i, 0], dirs[i, 1], dirs[i, 2], t_min,
        )
        out[i] = k >= 0
    return out


@njit(cache=True)
def point_tri_dist2(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Squared distance from a point to a triangle (Ericson, RTCD 5.1.5)."""
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        qx = ax + t * abx - px
        qy = ay + t * aby - py
        qz = az + t * abz - pz
        return qx * qx + qy * qy + qz * qz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        qx = ax + t * acx - px
        qy = ay + t * acy - py
        qz = az + t * acz - pz
        return qx * qx + qy * qy + qz * qz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and d4 - d3 >= 0.0 and d5 - d6 >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = bx + t * (cx - bx) - px
        qy = by + t * (cy - by) - py
        qz = bz + t * (cz - bz) - pz
        return qx * qx + qy * qy + qz * qz
    denom = 1.0 / (va + vb + vc)
    s = vb * denom
    t = vc * denom
    qx = ax + abx * s + acx * t - px
    qy = ay + aby * s + acy * t - py
    qz = az + abz * s + acz * t - pz
    return qx * qx + qy * qy + qz * qz


@njit(cache=True, parallel=True)
def mark_shell(gv0, gv1, gv2, n_res, radius, marks):
    """Mark voxels (flat index into an n_res^3 grid) whose center lies within
    ``radius`` of any triangle. Triangle vertices are in voxel units.
    Idempotent writes, safe under the parallel loop."""
    r2 = radius * radius
    for ti in prange(gv0.shape[0]):
        lox = min(gv0[ti, 0], min(gv1[ti, 0], gv2[ti, 0])) - radius
        hix = max(gv0[ti, 0], max(gv1[ti, 0], gv2[ti, 0])) + radius
        loy = min(gv0[ti, 1], min(gv1[ti, 1], gv2[ti, 1])) - radius
        hiy = max(gv0[ti, 1], max(gv1[ti, 1], gv2[ti, 1])) + radius
        loz = min(gv0[ti, 2], min(gv1[ti, 2], gv2[ti, 2])) - radius
        hiz = max(gv0[ti, 2], max(gv1[ti, 2], gv2[ti, 2])) + radius
        x0 = max(int(np.floor(lox - 0.5)), 0)
        x1 = min(int(np.ceil(hix - 0.5)), n_res - 1)
        y0 = max(int(np.floor(loy - 0.5)), 0)
        y1 = min(int(np.ceil(hiy - 0.5)), n_res - 1)
        z0 = max(int(np.floor(loz - 0.5)), 0)
        z1 = min(int(np.ceil(hiz - 0.5)), n_res - 1)
        for xi in range(x0, x1 + 1):
            cx = xi + 0.5
            for yi in range(y0, y1 + 1):
                cy = yi + 0.5
                for zi in range(z0, z1 + 1):
                    cz = zi + 0.5
                    d2 = point_tri_dist2(
                        cx, cy, cz,
                        gv0[ti, 0], gv0[ti, 1], gv0[ti, 2],
                        gv1[ti, 0], gv1[ti, 1], gv1[ti, 2],
                        gv2[ti, 0], gv2[ti, 1], gv2[ti, 2],
                    )
                    if d2 <= r2:
                        marks[(xi * n_res + yi) * n_res + zi] = 1
