"""Grid path search and refinement: JPS shortest paths, distance-field path
pushing (DMP), reachability flood fill and intermediate-goal selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _search
from .grid import FREE, VoxelGrid
from ._search import DIRS, DIR_NORMS, jps_kernel, penalized_astar_kernel


class PathError(ValueError):
    """Invalid search input (e.g. start voxel not traversable)."""


@dataclass
class GridPath:
    """Waypoints at voxel centers; consecutive voxels are 26-adjacent."""

    voxels: np.ndarray  # (n, 3) int64
    waypoints: np.ndarray  # (n, 3) world positions, m
    length: float  # m


def path_length(voxels: np.ndarray, voxel_size: float) -> float:
    """Canonical path length: exactly-rounded sum of per-step Euclidean
    costs, so equal step multisets always compare equal."""
    if len(voxels) < 2:
        return 0.0
    steps = np.diff(np.asarray(voxels, dtype=np.int64), axis=0)
    return math.fsum(voxel_size * math.sqrt(float(s @ s)) for s in steps)


def inflation_structure(voxel_size: float, d_rad: float) -> np.ndarray:
    """Dilation footprint blocking voxels whose center is within d_rad of
    any obstacle voxel cube."""
    r = int(math.ceil((d_rad + 0.5 * voxel_size) / voxel_size))
    size = 2 * r + 1
    out = np.zeros((size, size, size), dtype=bool)
    half = 0.5 * voxel_size
    for dx in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dz in range(-r, r + 1):
                gap = np.maximum(
                    np.abs(np.array([dx, dy, dz]) * voxel_size) - half, 0.0
                )
                if math.sqrt(float(gap @ gap)) <= d_rad + 1e-12:
                    out[dx + r, dy + r, dz + r] = True
    return out


def traversable_mask(grid: VoxelGrid, d_rad: float) -> np.ndarray:
    """Free voxels minus the d_rad inflation of occupied/unknown space."""
    obstacle = grid.states != FREE
    inflated = ndimage.binary_dilation(obstacle, structure=inflation_structure(grid.voxel_size, d_rad))
    return (grid.states == FREE) & ~inflated


def _clean_mask(trav: np.ndarray) -> np.ndarray:
    # Voxels whose whole 26-neighborhood is in-bounds and traversable;
    # jumps may pass through these without stopping.
    return ndimage.binary_erosion(trav, structure=np.ones((3, 3, 3), dtype=bool), border_value=0)


_workspaces: dict[tuple, dict] = {}


def _workspace(shape: tuple[int, int, int], heap_cap: int) -> dict:
    n = shape[0] * shape[1] * shape[2]
    ws = _workspaces.get(shape)
    if ws is None or ws["heap_keys"].shape[0] < heap_cap:
        ws = {
            "g": np.empty(n, dtype=np.float64),
            "parent": np.empty(n, dtype=np.int64),
            "closed": np.empty(n, dtype=np.uint8),
            "heap_keys": np.empty(heap_cap, dtype=np.float64),
            "heap_ids": np.empty(heap_cap, dtype=np.int64),
        }
        _workspaces[shape] = ws
    ws["g"].fill(np.inf)
    ws["parent"].fill(-1)
    ws["closed"].fill(0)
    return ws


def _id_to_xyz(i: int, dims) -> tuple[int, int, int]:
    nx, ny, _ = dims
    return i % nx, (i // nx) % ny, i // (nx * ny)


def _expand_jump_chain(ids, dims) -> np.ndarray:
    # Jump segments run along one of the 26 directions; expand to unit steps.
    pts = [_id_to_xyz(ids[0], dims)]
    for a, b in zip(ids, ids[1:]):
        ax, ay, az = _id_to_xyz(a, dims)
        bx, by, bz = _id_to_xyz(b, dims)
        dx, dy, dz = np.sign(bx - ax), np.sign(by - ay), np.sign(bz - az)
        x, y, z = ax, ay, az
        while (x, y, z) != (bx, by, bz):
            x, y, z = x + dx, y + dy, z + dz
            pts.append((x, y, z))
    return np.array(pts, dtype=np.int64)


def jps_search(grid: VoxelGrid, start, goal, traversable: np.ndarray | None = None) -> GridPath | None:
    """Shortest 26-connected path by Euclidean step cost, or None when the
    goal is unreachable. Traversable space defaults to free voxels."""
    trav = traversable if traversable is not None else grid.states == FREE
    start = tuple(int(v) for v in start)
    goal = tuple(int(v) for v in goal)
    if not grid.in_bounds(start) or not trav[start]:
        raise PathError(f"start voxel {start} is not traversable")
    if not grid.in_bounds(goal) or not trav[goal]:
        return None
    if start == goal:
        vox = np.array([start], dtype=np.int64)
        return GridPath(vox, _centers(grid, vox), 0.0)

    status, ws = _run_search_jps(grid, start, goal, trav)
    if status == 0:
        return None
    nx, ny, _ = grid.dims
    goal_id = goal[0] + nx * (goal[1] + ny * goal[2])
    start_id = start[0] + nx * (start[1] + ny * start[2])
    chain = [goal_id]
    while chain[-1] != start_id:
        chain.append(int(ws["parent"][chain[-1]]))
    chain.reverse()
    vox = _expand_jump_chain(chain, grid.dims)
    return GridPath(vox, _centers(grid, vox), path_length(vox, grid.voxel_size))


def _run_search_jps(grid, start, goal, trav):
    dims = grid.dims
    n = dims[0] * dims[1] * dims[2]
    clean = _clean_mask(trav).astype(np.uint8)
    trav8 = trav.astype(np.uint8)
    heap_cap = max(4096, 4 * n)
    while True:
        ws = _workspace(dims, heap_cap)
        status = jps_kernel(
            trav8, clean, grid.voxel_size, DIRS, DIR_NORMS,
            start[0], start[1], start[2], goal[0], goal[1], goal[2],
            ws["g"], ws["parent"], ws["closed"], ws["heap_keys"], ws["heap_ids"],
        )
        if status != -1:
            return status, ws
        heap_cap *= 2


def _centers(grid: VoxelGrid, voxels: np.ndarray) -> np.ndarray:
    return grid.origin + (voxels.astype(np.float64) + 0.5) * grid.voxel_size


def distance_field(grid: VoxelGrid) -> np.ndarray:
    """Euclidean distance (m) from each voxel center to the nearest
    occupied-or-unknown voxel center; zero on those voxels."""
    return ndimage.distance_transform_edt(grid.states == FREE, sampling=grid.voxel_size)


def penalized_cost(voxels: np.ndarray, field: np.ndarray, voxel_size: float,
                   push_dist: float, weight: float) -> float:
    """Canonical value of the push objective along a voxel path."""
    voxels = np.asarray(voxels, dtype=np.int64)
    terms = []
    for a, b in zip(voxels, voxels[1:]):
        step = b - a
        terms.append(voxel_size * math.sqrt(float(step @ step)))
        terms.append(weight * max(0.0, push_dist - float(field[tuple(b)])))
    return math.fsum(terms)


def dmp_push(grid: VoxelGrid, field: np.ndarray, start, goal,
             push_dist: float = 0.6, weight: float = 10.0,
             traversable: np.ndarray | None = None) -> GridPath | None:
    """Re-search the grid with a clearance penalty so the path keeps
    push_dist from obstacles where the map allows it."""
    trav = traversable if traversable is not None else grid.states == FREE
    start = tuple(int(v) for v in start)
    goal = tuple(int(v) for v in goal)
    if not grid.in_bounds(start) or not trav[start]:
        raise PathError(f"start voxel {start} is not traversable")
    if not grid.in_bounds(goal) or not trav[goal]:
        return None
    if start == goal:
        vox = np.array([start], dtype=np.int64)
        return GridPath(vox, _centers(grid, vox), 0.0)

    dims = grid.dims
    n = dims[0] * dims[1] * dims[2]
    trav8 = trav.astype(np.uint8)
    field64 = np.ascontiguousarray(field, dtype=np.float64)
    heap_cap = max(4096, 8 * n)
    while True:
        ws = _workspace(dims, heap_cap)
        status = penalized_astar_kernel(
            trav8, field64, grid.voxel_size, DIRS, DIR_NORMS,
            push_dist, weight,
            start[0], start[1], start[2], goal[0], goal[1], goal[2],
            ws["g"], ws["parent"], ws["closed"], ws["heap_keys"], ws["heap_ids"],
        )
        if status != -1:
            break
        heap_cap *= 2
    if status == 0:
        return None
    nx, ny, _ = grid.dims
    goal_id = goal[0] + nx * (goal[1] + ny * goal[2])
    start_id = start[0] + nx * (start[1] + ny * start[2])
    chain = [goal_id]
    while chain[-1] != start_id:
        chain.append(int(ws["parent"][chain[-1]]))
    chain.reverse()
    vox = np.array([_id_to_xyz(i, grid.dims) for i in chain], dtype=np.int64)
    return GridPath(vox, _centers(grid, vox), path_length(vox, grid.voxel_size))


_SNAP_OFFSETS: dict[int, np.ndarray] = {}


def _snap_offsets(radius: int) -> np.ndarray:
    # Ball offsets sorted by squared distance (stable order for tie-break).
    offs = _SNAP_OFFSETS.get(radius)
    if offs is None:
        cands = []
        for dx in range(-radius, radius + 1):
            for dy in range(-radius, radius + 1):
                for dz in range(-radius, radius + 1):
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 <= radius * radius:
                        cands.append((d2, dx, dy, dz))
        cands.sort()
        offs = np.array([(c[1], c[2], c[3]) for c in cands], dtype=np.int64)
        _SNAP_OFFSETS[radius] = offs
    return offs


def snap_to_mask(grid: VoxelGrid, voxel, mask: np.ndarray, radius: int):
    """Nearest voxel (Euclidean, then smallest linear index) within radius
    where mask holds, or None."""
    base = np.asarray(voxel, dtype=np.int64)
    offs = _snap_offsets(radius)
    best = None
    best_key = None
    prev_d2 = -1
    for off in offs:
        d2 = int(off @ off)
        if best is not None and d2 > prev_d2:
            break  # a full distance shell after a hit: done
        cand = base + off
        if not grid.in_bounds(cand):
            continue
        if mask[tuple(cand)]:
            key = (d2, grid.linear_index(cand))
            if best_key is None or key < best_key:
                best = tuple(int(v) for v in cand)
                best_key = key
                prev_d2 = d2
    return best


def reachable_set(grid: VoxelGrid, seeds, mask: np.ndarray | None = None) -> np.ndarray:
    """Flood fill (26-connectivity) over free voxels from the agents'
    voxels. An off-mask seed reseeds at the nearest in-mask voxel within 2
    voxels, else contributes nothing."""
    if mask is None:
        mask = grid.states == FREE
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3, 3), dtype=bool))
    wanted = set()
    for seed in seeds:
        seed = tuple(int(v) for v in seed)
        if not grid.in_bounds(seed):
            continue
        if not mask[seed]:
            snapped = snap_to_mask(grid, seed, mask, 2)
            if snapped is None:
                continue
            seed = snapped
        wanted.add(int(labels[seed]))
    if not wanted:
        return np.zeros(grid.dims, dtype=bool)
    return np.isin(labels, sorted(wanted)) & mask


def intermediate_goal(local: VoxelGrid, global_goal):
    """Goal voxel to use inside the local grid.

    Inside the grid the goal maps straight to its voxel. Outside, take the
    point where the agent-to-goal segment leaves the grid (shrunk inward by
    one voxel) and snap it to the nearest free voxel within 5 voxels;
    None when no free voxel is close enough.
    """
    goal = np.asarray(global_goal, dtype=np.float64)
    if local.contains_point(goal):
        return local.voxel_of(goal)
    vs = local.voxel_size
    center = local.origin + np.array(local.dims) * vs / 2.0
    lo = local.origin + vs
    hi = local.extent_max - vs
    d = goal - center
    t_exit = 1.0
    for a in range(3):
        if d[a] > 0:
            t_exit = min(t_exit, (hi[a] - center[a]) / d[a])
        elif d[a] < 0:
            t_exit = min(t_exit, (lo[a] - center[a]) / d[a])
    p = center + t_exit * d
    v = np.clip(local.voxel_of(p), 0, np.array(local.dims) - 1)
    return snap_to_mask(local, v, local.states == FREE, 5)
