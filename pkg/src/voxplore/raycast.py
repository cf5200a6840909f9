"""Amanatides-Woo voxel stepping kernels (numba JIT, cached).

All kernels walk the segment sensor -> endpoint, clipped to the grid box.
Parameter t runs 0..1 along the segment; voxel entry happens at the tmax
value of the axis being crossed.
"""

import math

import numpy as np
from numba import njit

_OCC = 2  # mirrors grid.OCCUPIED; numba kernels take raw uint8 arrays


@njit(cache=True)
def _clip_t_end(sx, sy, sz, ex, ey, ez, ox, oy, oz, hx, hy, hz):
    # Sensor is inside the box; clip only the far end.
    t_end = 1.0
    for a in range(3):
        if a == 0:
            s, e, lo, hi = sx, ex, ox, hx
        elif a == 1:
            s, e, lo, hi = sy, ey, oy, hy
        else:
            s, e, lo, hi = sz, ez, oz, hz
        d = e - s
        if d > 0.0:
            t = (hi - s) / d
            if t < t_end:
                t_end = t
        elif d < 0.0:
            t = (lo - s) / d
            if t < t_end:
                t_end = t
    return t_end


@njit(cache=True)
def integrate_rays(free_acc, occ_acc, origin, vs, sensor, points, hits):
    """Carve rays into free/occupied accumulator masks (uint8 0/1)."""
    nx, ny, nz = free_acc.shape
    ox, oy, oz = origin[0], origin[1], origin[2]
    hx, hy, hz = ox + nx * vs, oy + ny * vs, oz + nz * vs
    sx, sy, sz = sensor[0], sensor[1], sensor[2]

    for i in range(points.shape[0]):
        ex, ey, ez = points[i, 0], points[i, 1], points[i, 2]
        t_end = _clip_t_end(sx, sy, sz, ex, ey, ez, ox, oy, oz, hx, hy, hz)
        clipped = t_end < 1.0 - 1e-12

        ix = min(max(int(math.floor((sx - ox) / vs)), 0), nx - 1)
        iy = min(max(int(math.floor((sy - oy) / vs)), 0), ny - 1)
        iz = min(max(int(math.floor((sz - oz) / vs)), 0), nz - 1)

        dx, dy, dz = ex - sx, ey - sy, ez - sz
        step_x = 1 if dx > 0.0 else -1
        step_y = 1 if dy > 0.0 else -1
        step_z = 1 if dz > 0.0 else -1
        tmax_x = ((ox + (ix + (step_x > 0)) * vs) - sx) / dx if dx != 0.0 else math.inf
        tmax_y = ((oy + (iy + (step_y > 0)) * vs) - sy) / dy if dy != 0.0 else math.inf
        tmax_z = ((oz + (iz + (step_z > 0)) * vs) - sz) / dz if dz != 0.0 else math.inf
        tdelta_x = vs / abs(dx) if dx != 0.0 else math.inf
        tdelta_y = vs / abs(dy) if dy != 0.0 else math.inf
        tdelta_z = vs / abs(dz) if dz != 0.0 else math.inf

        while True:
            tn = tmax_x
            if tmax_y < tn:
                tn = tmax_y
            if tmax_z < tn:
                tn = tmax_z
            if tn >= t_end - 1e-12:
                # Final voxel on this ray: occupied for an in-grid hit,
                # traversed-free otherwise.
                if hits[i] == 1 and not clipped:
                    occ_acc[ix, iy, iz] = 1
                else:
                    free_acc[ix, iy, iz] = 1
                break
            free_acc[ix, iy, iz] = 1
            if tmax_x <= tmax_y and tmax_x <= tmax_z:
                ix += step_x
                tmax_x += tdelta_x
            elif tmax_y <= tmax_z:
                iy += step_y
                tmax_y += tdelta_y
            else:
                iz += step_z
                tmax_z += tdelta_z
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                break


@njit(cache=True)
def sense_rays(truth, origin, vs, sensor, targets, hit_seen, hit_pts, nohit_pts):
    """Cast one ray per target voxel center over the truth grid.

    Emits a boundary hit point (nudged inside the occupied voxel,
    deduplicated per voxel via hit_seen) or a no-hit return at the target
    center. Returns (n_hits, n_nohits).
    """
    nx, ny, nz = truth.shape
    ox, oy, oz = origin[0], origin[1], origin[2]
    hx, hy, hz = ox + nx * vs, oy + ny * vs, oz + nz * vs
    sx, sy, sz = sensor[0], sensor[1], sensor[2]
    eps = 1e-6
    n_hit = 0
    n_nohit = 0

    for i in range(targets.shape[0]):
        tx, ty, tz = targets[i, 0], targets[i, 1], targets[i, 2]
        ex = ox + (tx + 0.5) * vs
        ey = oy + (ty + 0.5) * vs
        ez = oz + (tz + 0.5) * vs

        ix = min(max(int(math.floor((sx - ox) / vs)), 0), nx - 1)
        iy = min(max(int(math.floor((sy - oy) / vs)), 0), ny - 1)
        iz = min(max(int(math.floor((sz - oz) / vs)), 0), nz - 1)

        dx, dy, dz = ex - sx, ey - sy, ez - sz
        step_x = 1 if dx > 0.0 else -1
        step_y = 1 if dy > 0.0 else -1
        step_z = 1 if dz > 0.0 else -1
        tmax_x = ((ox + (ix + (step_x > 0)) * vs) - sx) / dx if dx != 0.0 else math.inf
        tmax_y = ((oy + (iy + (step_y > 0)) * vs) - sy) / dy if dy != 0.0 else math.inf
        tmax_z = ((oz + (iz + (step_z > 0)) * vs) - sz) / dz if dz != 0.0 else math.inf
        tdelta_x = vs / abs(dx) if dx != 0.0 else math.inf
        tdelta_y = vs / abs(dy) if dy != 0.0 else math.inf
        tdelta_z = vs / abs(dz) if dz != 0.0 else math.inf

        t_entry = 0.0
        while True:
            if truth[ix, iy, iz] == _OCC:
                if hit_seen[ix, iy, iz] == 0:
                    hit_seen[ix, iy, iz] = 1
                    # Boundary point, clamped just inside the hit voxel so
                    # containment is unambiguous downstream.
                    px = sx + t_entry * dx
                    py = sy + t_entry * dy
                    pz = sz + t_entry * dz
                    lox, loy, loz = ox + ix * vs, oy + iy * vs, oz + iz * vs
                    px = min(max(px, lox + eps), lox + vs - eps)
                    py = min(max(py, loy + eps), loy + vs - eps)
                    pz = min(max(pz, loz + eps), loz + vs - eps)
                    hit_pts[n_hit, 0] = px
                    hit_pts[n_hit, 1] = py
                    hit_pts[n_hit, 2] = pz
                    n_hit += 1
                break
            if ix == tx and iy == ty and iz == tz:
                nohit_pts[n_nohit, 0] = ex
                nohit_pts[n_nohit, 1] = ey
                nohit_pts[n_nohit, 2] = ez
                n_nohit += 1
                break
            if tmax_x <= tmax_y and tmax_x <= tmax_z:
                t_entry = tmax_x
                ix += step_x
                tmax_x += tdelta_x
            elif tmax_y <= tmax_z:
                t_entry = tmax_y
                iy += step_y
                tmax_y += tdelta_y
            else:
                t_entry = tmax_z
                iz += step_z
                tmax_z += tdelta_z
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                break
    return n_hit, n_nohit


@njit(cache=True)
def segment_blocked(truth, origin, vs, start, end):
    """True if any occupied truth voxel lies on the segment start -> end."""
    nx, ny, nz = truth.shape
    ox, oy, oz = origin[0], origin[1], origin[2]
    hx, hy, hz = ox + nx * vs, oy + ny * vs, oz + nz * vs
    sx, sy, sz = start[0], start[1], start[2]
    ex, ey, ez = end[0], end[1], end[2]
    t_end = _clip_t_end(sx, sy, sz, ex, ey, ez, ox, oy, oz, hx, hy, hz)

    ix = min(max(int(math.floor((sx - ox) / vs)), 0), nx - 1)
    iy = min(max(int(math.floor((sy - oy) / vs)), 0), ny - 1)
    iz = min(max(int(math.floor((sz - oz) / vs)), 0), nz - 1)

    dx, dy, dz = ex - sx, ey - sy, ez - sz
    step_x = 1 if dx > 0.0 else -1
    step_y = 1 if dy > 0.0 else -1
    step_z = 1 if dz > 0.0 else -1
    tmax_x = ((ox + (ix + (step_x > 0)) * vs) - sx) / dx if dx != 0.0 else math.inf
    tmax_y = ((oy + (iy + (step_y > 0)) * vs) - sy) / dy if dy != 0.0 else math.inf
    tmax_z = ((oz + (iz + (step_z > 0)) * vs) - sz) / dz if dz != 0.0 else math.inf
    tdelta_x = vs / abs(dx) if dx != 0.0 else math.inf
    tdelta_y = vs / abs(dy) if dy != 0.0 else math.inf
    tdelta_z = vs / abs(dz) if dz != 0.0 else math.inf

    while True:
        if truth[ix, iy, iz] == _OCC:
            return True
        tn = tmax_x
        if tmax_y < tn:
            tn = tmax_y
        if tmax_z < tn:
            tn = tmax_z
        if tn >= t_end - 1e-12:
            return False
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            ix += step_x
            tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            iy += step_y
            tmax_y += tdelta_y
        else:
            iz += step_z
            tmax_z += tdelta_z
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False
