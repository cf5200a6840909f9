"""Hub-side goal computation: border voxels, clusters, potential goals,
greedy assignment and the exploration termination rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import FREE, UNKNOWN, VoxelGrid

_CONN26 = np.ones((3, 3, 3), dtype=bool)


@dataclass
class Cluster:
    """Connected component of border voxels."""

    members: list[tuple[int, int, int]]
    centroid: np.ndarray  # world position (m), mean of member voxel centers
    potential_goal: tuple[int, int, int]


@dataclass
class GoalAssignment:
    """Per-agent goal of one assignment round; None means no goal."""

    goals: list[np.ndarray | None]
    round_id: int


def find_border_voxels(grid: VoxelGrid) -> set[tuple[int, int, int]]:
    """Free voxels with at least one unknown voxel among their 26 neighbors."""
    unknown = grid.states == UNKNOWN
    free = grid.states == FREE
    near_unknown = ndimage.binary_dilation(unknown, structure=_CONN26)
    border = free & near_unknown
    return {tuple(idx) for idx in np.argwhere(border)}


def border_mask(grid: VoxelGrid) -> np.ndarray:
    """Boolean border-voxel mask, the array form of find_border_voxels."""
    unknown = grid.states == UNKNOWN
    free = grid.states == FREE
    return free & ndimage.binary_dilation(unknown, structure=_CONN26)


def cluster_borders(borders, grid: VoxelGrid) -> list[Cluster]:
    """Group border voxels into 26-connected components.

    ``borders`` is a boolean mask or an iterable of voxel indices. Clusters
    come back ordered by their smallest linear voxel index so the whole
    pipeline stays deterministic.
    """
    if isinstance(borders, np.ndarray) and borders.dtype == bool:
        mask = borders
    else:
        mask = np.zeros(grid.dims, dtype=bool)
        for idx in borders:
            mask[tuple(idx)] = True
    labels, n = ndimage.label(mask, structure=_CONN26)
    clusters = []
    for lab in range(1, n + 1):
        members_arr = np.argwhere(labels == lab)
        order = np.argsort(
            members_arr[:, 0]
            + grid.dims[0] * (members_arr[:, 1] + grid.dims[1] * members_arr[:, 2])
        )
        members = [tuple(int(v) for v in m) for m in members_arr[order]]
        centroid = grid.origin + (members_arr.mean(axis=0) + 0.5) * grid.voxel_size
        goal = select_potential_goal(members, grid)
        clusters.append(Cluster(members=members, centroid=centroid, potential_goal=goal))
    clusters.sort(key=lambda c: grid.linear_index(c.members[0]))
    return clusters


def select_potential_goal(members, grid: VoxelGrid) -> tuple[int, int, int]:
    """Member voxel whose center is closest to the cluster centroid.

    Distances are compared in exact integer arithmetic (indices scaled by
    the member count) so centroid ties break by smallest linear index, not
    by float rounding.
    """
    if not members:
        raise ValueError("cluster has no members")
    arr = np.asarray(members, dtype=np.int64)
    n = len(members)
    idx_sum = arr.sum(axis=0)  # n * centroid index
    d2 = np.sum((n * arr - idx_sum) ** 2, axis=1)
    lin = arr[:, 0] + grid.dims[0] * (arr[:, 1] + grid.dims[1] * arr[:, 2])
    best = np.lexsort((lin, d2))[0]
    return tuple(int(v) for v in arr[best])


def assign_goals(agents, potential_goals, round_id: int = 0) -> GoalAssignment:
    """Greedy assignment in agent-id order; each agent takes the closest
    remaining goal. Ties break by smallest goal-list index."""
    goals = [np.asarray(g, dtype=np.float64) for g in potential_goals]
    remaining = list(range(len(goals)))
    out: list[np.ndarray | None] = []
    for agent in agents:
        if not remaining:
            out.append(None)
            continue
        pos = np.asarray(agent, dtype=np.float64)
        best = min(remaining, key=lambda j: (float(np.sum((goals[j] - pos) ** 2)), j))
        out.append(goals[best])
        remaining.remove(best)
    return GoalAssignment(goals=out, round_id=round_id)


def exploration_complete(grid: VoxelGrid, reachable: np.ndarray) -> bool:
    """True when no unknown voxels remain, or none of them touches a
    reachable free voxel (26-connectivity)."""
    unknown = grid.states == UNKNOWN
    if not unknown.any():
        return True
    reachable_free = (grid.states == FREE) & reachable
    frontier_adjacent = ndimage.binary_dilation(reachable_free, structure=_CONN26) & unknown
    return not frontier_adjacent.any()


def write_cluster_dump(path, clusters, assignment: GoalAssignment | None = None) -> None:
    """Line-oriented debug dump: member count, centroid, goal voxel per
    cluster, then assigned goals."""
    with open(path, "w") as f:
        for c in clusters:
            cx, cy, cz = c.centroid
            gx, gy, gz = c.potential_goal
            f.write(f"cluster {len(c.members)} {cx:.6f} {cy:.6f} {cz:.6f} {gx} {gy} {gz}\n")
        if assignment is not None:
            for i, g in enumerate(assignment.goals):
                if g is None:
                    f.write(f"goal {i} none\n")
                else:
                    f.write(f"goal {i} {g[0]:.6f} {g[1]:.6f} {g[2]:.6f}\n")
