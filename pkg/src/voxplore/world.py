"""Seeded cylinder-forest worlds, ground-truth rasterization and the
simulated omnidirectional lidar."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import OCCUPIED, PointCloud, PositioningError, VoxelGrid
from .raycast import segment_blocked, sense_rays


@dataclass
class WorldModel:
    bounds: np.ndarray  # (x, y, z) extents, m
    cylinders: np.ndarray  # (n, 4): cx, cy, radius, height
    truth_grid: VoxelGrid


def generate_world(
    seed: int,
    size,
    density: float,
    radius: float = 0.35,
    height: float = 3.0,
    voxel_size: float = 0.3,
    clearance_points=(),
    clearance_radius: float = 1.0,
) -> WorldModel:
    """Uniformly scattered vertical cylinders; keeps a clearance disk
    around each given point (agent starts) by rejection resampling.
    Deterministic for a fixed seed."""
    size = np.asarray(size, dtype=np.float64)
    if density < 0:
        raise ValueError("density must be nonnegative")
    n_cyl = int(round(density * size[0] * size[1]))
    rng = np.random.default_rng(seed)
    clearance_points = np.asarray(clearance_points, dtype=np.float64).reshape(-1, 3)
    cylinders = np.zeros((n_cyl, 4))
    for i in range(n_cyl):
        while True:
            cx = rng.uniform(0.0, size[0])
            cy = rng.uniform(0.0, size[1])
            if len(clearance_points) > 0:
                d = np.hypot(clearance_points[:, 0] - cx, clearance_points[:, 1] - cy)
                if float(d.min()) < clearance_radius + radius:
                    continue
            break
        cylinders[i] = (cx, cy, radius, height)

    dims = tuple(int(round(s / voxel_size)) for s in size)
    truth = VoxelGrid((0.0, 0.0, 0.0), dims, voxel_size)
    xs = (np.arange(dims[0]) + 0.5) * voxel_size
    ys = (np.arange(dims[1]) + 0.5) * voxel_size
    zs = (np.arange(dims[2]) + 0.5) * voxel_size
    for cx, cy, r, h in cylinders:
        in_xy = (xs[:, None] - cx) ** 2 + (ys[None, :] - cy) ** 2 <= r * r
        in_z = zs < h
        truth.states[np.ix_(*np.nonzero(in_xy), np.nonzero(in_z)[0])] = OCCUPIED
    return WorldModel(bounds=size, cylinders=cylinders, truth_grid=truth)


def save_world(world: WorldModel, path) -> None:
    """One cylinder per line: cx cy radius height."""
    with open(path, "w") as f:
        for cx, cy, r, h in world.cylinders:
            f.write(f"{cx:.9f} {cy:.9f} {r:.9f} {h:.9f}\n")


def load_world(path, size, voxel_size: float = 0.3) -> WorldModel:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split()])
    cylinders = np.array(rows, dtype=np.float64).reshape(-1, 4)
    world = generate_world(0, size, 0.0, voxel_size=voxel_size)
    for cx, cy, r, h in cylinders:
        dims = world.truth_grid.dims
        xs = (np.arange(dims[0]) + 0.5) * voxel_size
        ys = (np.arange(dims[1]) + 0.5) * voxel_size
        zs = (np.arange(dims[2]) + 0.5) * voxel_size
        in_xy = (xs[:, None] - cx) ** 2 + (ys[None, :] - cy) ** 2 <= r * r
        world.truth_grid.states[np.ix_(*np.nonzero(in_xy), np.nonzero(zs < h)[0])] = OCCUPIED
    return WorldModel(bounds=np.asarray(size, float), cylinders=cylinders, truth_grid=world.truth_grid)


def _body_points(sensor: np.ndarray, center: np.ndarray, body_radius: float) -> np.ndarray:
    """Five deterministic surface points on the sensor-facing hemisphere of
    another agent's body sphere."""
    d = center - sensor
    dist = float(np.linalg.norm(d))
    u = d / dist
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(u, ref)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(u, t1)
    c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
    dirs = [-u, -c * u + s * t1, -c * u - s * t1, -c * u + s * t2, -c * u - s * t2]
    return np.array([center + body_radius * v for v in dirs])


def sense_lidar(
    world: WorldModel,
    agent_positions,
    self_id: int,
    lidar_range: float,
    target_mask: np.ndarray | None = None,
    body_radius: float = 0.3,
) -> PointCloud:
    """Cast one ray per truth voxel center within range (or per target_mask
    voxel): first occupied voxel yields a deduplicated boundary hit, clear
    rays yield a free-space return at the target center. Other agents'
    bodies add surface hit points when within range and line of sight."""
    agent_positions = np.asarray(agent_positions, dtype=np.float64).reshape(-1, 3)
    sensor = agent_positions[self_id]
    truth = world.truth_grid
    if not truth.contains_point(sensor):
        raise PositioningError(f"sensor {sensor} outside world bounds")

    vs = truth.voxel_size
    dims = truth.dims
    lo = np.maximum(0, np.floor((sensor - lidar_range - truth.origin) / vs).astype(int))
    hi = np.minimum(dims, np.ceil((sensor + lidar_range - truth.origin) / vs).astype(int))
    axes = [truth.origin[a] + (np.arange(lo[a], hi[a]) + 0.5) * vs for a in range(3)]
    d2 = (
        (axes[0][:, None, None] - sensor[0]) ** 2
        + (axes[1][None, :, None] - sensor[1]) ** 2
        + (axes[2][None, None, :] - sensor[2]) ** 2
    )
    in_range = d2 <= lidar_range * lidar_range
    if target_mask is not None:
        in_range &= target_mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    targets = np.argwhere(in_range) + lo
    points = np.empty((0, 3))
    hits = np.empty(0, dtype=bool)
    if len(targets) > 0:
        hit_seen = np.zeros(dims, dtype=np.uint8)
        hit_pts = np.empty((len(targets), 3))
        nohit_pts = np.empty((len(targets), 3))
        n_hit, n_nohit = sense_rays(
            truth.states, truth.origin, vs, sensor,
            np.ascontiguousarray(targets, dtype=np.int64), hit_seen, hit_pts, nohit_pts,
        )
        points = np.vstack([hit_pts[:n_hit], nohit_pts[:n_nohit]])
        hits = np.concatenate(
            [np.ones(n_hit, dtype=bool), np.zeros(n_nohit, dtype=bool)]
        )

    body = []
    for j, pos in enumerate(agent_positions):
        if j == self_id:
            continue
        dist = float(np.linalg.norm(pos - sensor))
        if dist > lidar_range or dist < 1e-9:
            continue
        if segment_blocked(truth.states, truth.origin, vs, sensor, pos):
            continue
        body.append(_body_points(sensor, pos, body_radius))
    if body:
        body_pts = np.vstack(body)
        points = np.vstack([points, body_pts]) if len(points) else body_pts
        hits = np.concatenate([hits, np.ones(len(body_pts), dtype=bool)])
    return PointCloud(sensor_origin=sensor, points=points, hits=hits)
