"""Grid search kernels (numba): jump-point shortest path and penalized A*.

Nodes are flat ids ``x + nx*(y + ny*z)``. ``clean`` marks voxels whose full
26-neighborhood is in-bounds and traversable; jumps stop at any non-clean
voxel, which over-approximates the forced-neighbor rule and therefore
preserves optimality at the cost of extra expansions near obstacles.
"""

import math

import numpy as np
from numba import njit

# 26 neighbor offsets, straight moves first.
_D = []
for _dz in (-1, 0, 1):
    for _dy in (-1, 0, 1):
        for _dx in (-1, 0, 1):
            if _dx or _dy or _dz:
                _D.append((_dx, _dy, _dz))
_D.sort(key=lambda d: (abs(d[0]) + abs(d[1]) + abs(d[2])))
DIRS = np.array(_D, dtype=np.int64)
DIR_NORMS = np.sqrt((DIRS.astype(np.float64) ** 2).sum(axis=1))


@njit(cache=True)
def _hpush(keys, ids, size, k, i):
    keys[size] = k
    ids[size] = i
    c = size
    while c > 0:
        p = (c - 1) >> 1
        if keys[p] > keys[c]:
            keys[p], keys[c] = keys[c], keys[p]
            ids[p], ids[c] = ids[c], ids[p]
            c = p
        else:
            break
    return size + 1


@njit(cache=True)
def _hpop(keys, ids, size):
    k = keys[0]
    i = ids[0]
    size -= 1
    keys[0] = keys[size]
    ids[0] = ids[size]
    c = 0
    while True:
        l = 2 * c + 1
        r = l + 1
        sm = c
        if l < size and keys[l] < keys[sm]:
            sm = l
        if r < size and keys[r] < keys[sm]:
            sm = r
        if sm != c:
            keys[sm], keys[c] = keys[c], keys[sm]
            ids[sm], ids[c] = ids[c], ids[sm]
            c = sm
        else:
            break
    return k, i, size


@njit(cache=True)
def _jump1(trav, clean, x, y, z, dx, dy, dz, gx, gy, gz):
    nx, ny, nz = trav.shape
    while True:
        x += dx
        y += dy
        z += dz
        if x < 0 or x >= nx or y < 0 or y >= ny or z < 0 or z >= nz:
            return False, 0, 0, 0
        if trav[x, y, z] == 0:
            return False, 0, 0, 0
        if x == gx and y == gy and z == gz:
            return True, x, y, z
        if clean[x, y, z] == 0:
            return True, x, y, z


@njit(cache=True)
def _jump2(trav, clean, x, y, z, dx, dy, dz, gx, gy, gz):
    nx, ny, nz = trav.shape
    while True:
        x += dx
        y += dy
        z += dz
        if x < 0 or x >= nx or y < 0 or y >= ny or z < 0 or z >= nz:
            return False, 0, 0, 0
        if trav[x, y, z] == 0:
            return False, 0, 0, 0
        if x == gx and y == gy and z == gz:
            return True, x, y, z
        if clean[x, y, z] == 0:
            return True, x, y, z
        # A straight jump succeeding off this diagonal makes it a turning
        # point worth expanding.
        if dx != 0:
            f, _, _, _ = _jump1(trav, clean, x, y, z, dx, 0, 0, gx, gy, gz)
            if f:
                return True, x, y, z
        if dy != 0:
            f, _, _, _ = _jump1(trav, clean, x, y, z, 0, dy, 0, gx, gy, gz)
            if f:
                return True, x, y, z
        if dz != 0:
            f, _, _, _ = _jump1(trav, clean, x, y, z, 0, 0, dz, gx, gy, gz)
            if f:
                return True, x, y, z


@njit(cache=True)
def _jump3(trav, clean, x, y, z, dx, dy, dz, gx, gy, gz):
    nx, ny, nz = trav.shape
    while True:
        x += dx
        y += dy
        z += dz
        if x < 0 or x >= nx or y < 0 or y >= ny or z < 0 or z >= nz:
            return False, 0, 0, 0
        if trav[x, y, z] == 0:
            return False, 0, 0, 0
        if x == gx and y == gy and z == gz:
            return True, x, y, z
        if clean[x, y, z] == 0:
            return True, x, y, z
        f, _, _, _ = _jump2(trav, clean, x, y, z, dx, dy, 0, gx, gy, gz)
        if f:
            return True, x, y, z
        f, _, _, _ = _jump2(trav, clean, x, y, z, dx, 0, dz, gx, gy, gz)
        if f:
            return True, x, y, z
        f, _, _, _ = _jump2(trav, clean, x, y, z, 0, dy, dz, gx, gy, gz)
        if f:
            return True, x, y, z
        f, _, _, _ = _jump1(trav, clean, x, y, z, dx, 0, 0, gx, gy, gz)
        if f:
            return True, x, y, z
        f, _, _, _ = _jump1(trav, clean, x, y, z, 0, dy, 0, gx, gy, gz)
        if f:
            return True, x, y, z
        f, _, _, _ = _jump1(trav, clean, x, y, z, 0, 0, dz, gx, gy, gz)
        if f:
            return True, x, y, z


@njit(cache=True)
def jps_kernel(trav, clean, vs, dirs, dir_norms, sx, sy, sz, gx, gy, gz,
               g, parent, closed, heap_keys, heap_ids):
    """Best-first search over jump points. Returns 1 on success, 0 on no
    path, -1 on heap overflow (caller retries with a bigger heap)."""
    nx, ny, nz = trav.shape
    cap = heap_keys.shape[0]
    start = sx + nx * (sy + ny * sz)
    goal = gx + nx * (gy + ny * gz)
    g[start] = 0.0
    h0 = vs * math.sqrt(
        float((gx - sx) ** 2 + (gy - sy) ** 2 + (gz - sz) ** 2)
    )
    size = _hpush(heap_keys, heap_ids, 0, h0, start)

    while size > 0:
        _, cur, size = _hpop(heap_keys, heap_ids, size)
        if closed[cur] == 1:
            continue
        closed[cur] = 1
        if cur == goal:
            return 1
        cx = cur % nx
        rem = cur // nx
        cy = rem % ny
        cz = rem // ny
        gc = g[cur]
        for d in range(26):
            dx = dirs[d, 0]
            dy = dirs[d, 1]
            dz = dirs[d, 2]
            order = abs(dx) + abs(dy) + abs(dz)
            if order == 1:
                found, jx, jy, jz = _jump1(trav, clean, cx, cy, cz, dx, dy, dz, gx, gy, gz)
            elif order == 2:
                found, jx, jy, jz = _jump2(trav, clean, cx, cy, cz, dx, dy, dz, gx, gy, gz)
            else:
                found, jx, jy, jz = _jump3(trav, clean, cx, cy, cz, dx, dy, dz, gx, gy, gz)
            if not found:
                continue
            jid = jx + nx * (jy + ny * jz)
            if closed[jid] == 1:
                continue
            steps = max(abs(jx - cx), max(abs(jy - cy), abs(jz - cz)))
            ng = gc + steps * vs * dir_norms[d]
            if ng < g[jid]:
                g[jid] = ng
                parent[jid] = cur
                h = vs * math.sqrt(
                    float((gx - jx) ** 2 + (gy - jy) ** 2 + (gz - jz) ** 2)
                )
                if size >= cap:
                    return -1
                size = _hpush(heap_keys, heap_ids, size, ng + h, jid)
    return 0


@njit(cache=True)
def penalized_astar_kernel(trav, field, vs, dirs, dir_norms, push, weight,
                           sx, sy, sz, gx, gy, gz,
                           g, parent, closed, heap_keys, heap_ids):
    """A* where entering a voxel costs step length plus
    weight * max(0, push - field[voxel]). Same return codes as jps_kernel."""
    nx, ny, nz = trav.shape
    cap = heap_keys.shape[0]
    start = sx + nx * (sy + ny * sz)
    goal = gx + nx * (gy + ny * gz)
    g[start] = 0.0
    h0 = vs * math.sqrt(
        float((gx - sx) ** 2 + (gy - sy) ** 2 + (gz - sz) ** 2)
    )
    size = _hpush(heap_keys, heap_ids, 0, h0, start)

    while size > 0:
        _, cur, size = _hpop(heap_keys, heap_ids, size)
        if closed[cur] == 1:
            continue
        closed[cur] = 1
        if cur == goal:
            return 1
        cx = cur % nx
        rem = cur // nx
        cy = rem % ny
        cz = rem // ny
        gc = g[cur]
        for d in range(26):
            mx = cx + dirs[d, 0]
            my = cy + dirs[d, 1]
            mz = cz + dirs[d, 2]
            if mx < 0 or mx >= nx or my < 0 or my >= ny or mz < 0 or mz >= nz:
                continue
            if trav[mx, my, mz] == 0:
                continue
            mid = mx + nx * (my + ny * mz)
            if closed[mid] == 1:
                continue
            pen = push - field[mx, my, mz]
            if pen < 0.0:
                pen = 0.0
            ng = gc + vs * dir_norms[d] + weight * pen
            if ng < g[mid]:
                g[mid] = ng
                parent[mid] = cur
                h = vs * math.sqrt(
                    float((gx - mx) ** 2 + (gy - my) ** 2 + (gz - mz) ** 2)
                )
                if size >= cap:
                    return -1
                size = _hpush(heap_keys, heap_ids, size, ng + h, mid)
    return 0
