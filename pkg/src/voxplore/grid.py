"""Dense 3-state voxel grids: scan integration, recentering and map merging.

Grids are value-like: every operation returns a new grid and never mutates
its inputs, so snapshots can be handed between threads freely.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .raycast import integrate_rays

UNKNOWN = np.uint8(0)
FREE = np.uint8(1)
OCCUPIED = np.uint8(2)

_MAGIC = b"VXGD"
_VERSION = 1
_HEADER = struct.Struct("<4sI3d3Id")

# Max deviation (m) tolerated between a supplied origin and the voxel lattice.
_ALIGN_TOL = 1e-9


class PositioningError(ValueError):
    """A sensor or agent position lies outside the grid it must be inside."""


class GridAlignmentError(ValueError):
    """Two grids do not share a voxel lattice (size or origin mismatch)."""


class VoxelGrid:
    """Axis-aligned dense occupancy lattice with a world-anchored origin.

    The origin (min corner) is stored internally as integer voxel
    coordinates so it stays an exact multiple of the voxel size through
    any number of recenter/merge operations.
    """

    __slots__ = ("origin_voxel", "voxel_size", "states")

    def __init__(self, origin, dims, voxel_size: float, states: np.ndarray | None = None):
        origin = np.asarray(origin, dtype=np.float64)
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three counts >= 1, got {dims}")
        if voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")
        ov = np.rint(origin / voxel_size).astype(np.int64)
        if np.any(np.abs(ov * voxel_size - origin) > _ALIGN_TOL):
            raise GridAlignmentError(
                f"origin {origin} is not a multiple of voxel_size {voxel_size}"
            )
        self.origin_voxel = ov
        self.voxel_size = float(voxel_size)
        if states is None:
            self.states = np.full(dims, UNKNOWN, dtype=np.uint8)
        else:
            if states.shape != dims:
                raise ValueError(f"states shape {states.shape} != dims {dims}")
            self.states = np.ascontiguousarray(states, dtype=np.uint8)

    @property
    def origin(self) -> np.ndarray:
        """World position (m) of the min corner."""
        return self.origin_voxel * self.voxel_size

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.states.shape

    @property
    def extent_max(self) -> np.ndarray:
        return (self.origin_voxel + np.array(self.dims)) * self.voxel_size

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.origin, self.dims, self.voxel_size, self.states.copy())

    def contains_point(self, point) -> bool:
        point = np.asarray(point, dtype=np.float64)
        return bool(np.all(point >= self.origin) and np.all(point < self.extent_max))

    def voxel_of(self, point) -> tuple[int, int, int]:
        """Index of the voxel containing a world point (boundary goes to the
        higher-index voxel, matching floor semantics)."""
        idx = np.floor((np.asarray(point, dtype=np.float64) - self.origin) / self.voxel_size)
        return tuple(int(i) for i in idx)

    def center_of(self, index) -> np.ndarray:
        """World position (m) of a voxel center."""
        return self.origin + (np.asarray(index, dtype=np.float64) + 0.5) * self.voxel_size

    def in_bounds(self, index) -> bool:
        return all(0 <= index[a] < self.dims[a] for a in range(3))

    def linear_index(self, index) -> int:
        """x-fastest flat index, the canonical deterministic ordering."""
        nx, ny, _ = self.dims
        return int(index[0] + nx * (index[1] + ny * index[2]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            np.array_equal(self.origin_voxel, other.origin_voxel)
            and self.voxel_size == other.voxel_size
            and np.array_equal(self.states, other.states)
        )


@dataclass
class PointCloud:
    """A lidar scan: world-frame return points plus a per-point hit flag.

    ``hits[i]`` is False for max-range returns, which carve free space but
    mark nothing occupied.
    """

    sensor_origin: np.ndarray
    points: np.ndarray  # (n, 3) world positions, m
    hits: np.ndarray = field(default=None)  # (n,) bool

    def __post_init__(self):
        self.sensor_origin = np.asarray(self.sensor_origin, dtype=np.float64)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.hits is None:
            self.hits = np.ones(len(self.points), dtype=bool)
        else:
            self.hits = np.asarray(self.hits, dtype=bool).reshape(-1)
        if len(self.hits) != len(self.points):
            raise ValueError("hits length must match points")


def integrate_scan(
    grid: VoxelGrid,
    cloud: PointCloud,
    other_agent_centers=(),
    removal_radius: float = 0.6,
) -> VoxelGrid:
    """Fuse one scan into the grid by ray carving.

    Points within ``removal_radius`` of another agent's center are dropped.
    Every surviving hit marks its voxel occupied; voxels traversed on the
    way (and whole no-hit rays) become free. Occupied beats free when rays
    of the same scan disagree about a voxel.
    """
    if not grid.contains_point(cloud.sensor_origin):
        raise PositioningError(
            f"sensor origin {cloud.sensor_origin} outside grid extent"
        )
    out = grid.copy()
    points = cloud.points
    hits = cloud.hits
    if len(points) == 0:
        return out

    centers = np.asarray(other_agent_centers, dtype=np.float64).reshape(-1, 3)
    if len(centers) > 0:
        d2 = np.min(
            np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2), axis=1
        )
        keep = d2 > removal_radius * removal_radius
        points = points[keep]
        hits = hits[keep]
    if len(points) == 0:
        return out

    free_acc = np.zeros(grid.dims, dtype=np.uint8)
    occ_acc = np.zeros(grid.dims, dtype=np.uint8)
    integrate_rays(
        free_acc,
        occ_acc,
        grid.origin,
        grid.voxel_size,
        cloud.sensor_origin,
        np.ascontiguousarray(points),
        np.ascontiguousarray(hits.astype(np.uint8)),
    )
    out.states[free_acc.astype(bool)] = FREE
    out.states[occ_acc.astype(bool)] = OCCUPIED
    return out


def recenter(grid: VoxelGrid, agent_position) -> VoxelGrid:
    """Slide the grid so the agent sits in the center voxel.

    The shift is a whole number of voxels; still-covered voxels keep their
    state and newly exposed ones are unknown. A position exactly on a voxel
    boundary counts as the lower-index voxel.
    """
    agent_position = np.asarray(agent_position, dtype=np.float64)
    f = (agent_position - grid.origin) / grid.voxel_size
    # ceil(f - 1) == floor(f) except exactly on boundaries, where it picks
    # the lower voxel.
    agent_voxel = np.ceil(f - 1.0).astype(np.int64)
    center = (np.array(grid.dims, dtype=np.int64) - 1) // 2
    shift = agent_voxel - center
    if np.all(shift == 0):
        return grid.copy()

    out = VoxelGrid(
        (grid.origin_voxel + shift) * grid.voxel_size, grid.dims, grid.voxel_size
    )
    src_lo = np.maximum(0, shift)
    src_hi = np.minimum(grid.dims, np.array(grid.dims) + shift)
    if np.all(src_lo < src_hi):
        dst_lo = src_lo - shift
        dst_hi = src_hi - shift
        out.states[
            dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]
        ] = grid.states[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
    return out


def merge_local_into_global(
    global_grid: VoxelGrid, local: VoxelGrid, static_env: bool = False
) -> VoxelGrid:
    """Overlay a local grid onto the global one.

    Unknown local voxels never overwrite; with ``static_env`` an occupied
    global voxel is also left alone. Local voxels outside the global extent
    are ignored.
    """
    if abs(global_grid.voxel_size - local.voxel_size) > 1e-12:
        raise GridAlignmentError(
            f"voxel sizes differ: {global_grid.voxel_size} vs {local.voxel_size}"
        )
    off = local.origin_voxel - global_grid.origin_voxel
    out = global_grid.copy()
    g_lo = np.maximum(0, off)
    g_hi = np.minimum(global_grid.dims, np.array(local.dims) + off)
    if np.any(g_lo >= g_hi):
        return out
    l_lo = g_lo - off
    l_hi = g_hi - off
    g = out.states[g_lo[0]:g_hi[0], g_lo[1]:g_hi[1], g_lo[2]:g_hi[2]]
    l = local.states[l_lo[0]:l_hi[0], l_lo[1]:l_hi[1], l_lo[2]:l_hi[2]]
    mask = l != UNKNOWN
    if static_env:
        mask &= g != OCCUPIED
    g[mask] = l[mask]
    return out


def save_grid(grid: VoxelGrid, path) -> None:
    """Write the snapshot format: VXGD header then one byte per voxel,
    x-fastest."""
    header = _HEADER.pack(
        _MAGIC, _VERSION, *grid.origin.tolist(), *grid.dims, grid.voxel_size
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(grid.states.flatten(order="F").tobytes())


def load_grid(path) -> VoxelGrid:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated grid snapshot")
    magic, version, ox, oy, oz, nx, ny, nz, vs = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    if body.size != nx * ny * nz:
        raise ValueError("snapshot body size does not match dims")
    states = body.reshape((nx, ny, nz), order="F").copy()
    return VoxelGrid((ox, oy, oz), (nx, ny, nz), vs, states)
