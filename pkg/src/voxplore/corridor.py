"""Safe corridors: greedy free-space cuboids around the global path, and
per-step augmentation with inter-agent separating hyperplanes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FREE, VoxelGrid


class CorridorError(ValueError):
    """Corridor construction got an invalid path."""


class DegenerateGeometryError(ValueError):
    """Two agents share a position; no separating hyperplane exists."""


@dataclass
class Halfspace:
    """normal . p <= offset with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64)
        n = float(np.linalg.norm(self.normal))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"halfspace normal must be unit length, got {n}")
        self.offset = float(self.offset)

    def contains(self, p, tol: float = 1e-9) -> bool:
        return float(self.normal @ np.asarray(p, dtype=np.float64)) <= self.offset + tol


@dataclass
class Polyhedron:
    """Intersection of halfspaces; cuboid-built ones carry their world box
    for fast membership seeding."""

    halfspaces: list[Halfspace]
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return all(h.contains(p, tol) for h in self.halfspaces)

    def as_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.array([h.normal for h in self.halfspaces])
        c = np.array([h.offset for h in self.halfspaces])
        return a, c

    def augmented(self, extra: list[Halfspace]) -> "Polyhedron":
        return Polyhedron(self.halfspaces + list(extra), self.box_lo, self.box_hi)


@dataclass
class TimeAwareCorridor:
    """Per-step polyhedra sets SC_k for k = 0..N-1; step_feasible[k] is
    False when every polyhedron of that step is empty."""

    steps: list[list[Polyhedron]]
    step_feasible: list[bool]


def _cuboid_polyhedron(grid: VoxelGrid, lo: np.ndarray, hi: np.ndarray, d_rad: float) -> Polyhedron:
    world_lo = grid.origin + lo * grid.voxel_size
    world_hi = grid.origin + (hi + 1) * grid.voxel_size
    halfspaces = []
    for a in range(3):
        n = np.zeros(3)
        n[a] = 1.0
        halfspaces.append(Halfspace(n.copy(), world_hi[a] - d_rad))
        n[a] = -1.0
        halfspaces.append(Halfspace(n.copy(), -(world_lo[a] + d_rad)))
    return Polyhedron(halfspaces, world_lo + d_rad, world_hi - d_rad)


def build_corridor(grid: VoxelGrid, path, p_hor: int = 2, d_rad: float = 0.3) -> list[Polyhedron]:
    """Greedy overlapping cuboids over free voxels along the path.

    Each cuboid seeds from the AABB of the current path segment and grows
    one face layer at a time while the new layer is all free, then turns
    into 6 halfspaces pulled inward by d_rad. The next seed straddles the
    exit so consecutive cuboids overlap.
    """
    vox = np.asarray(path.voxels, dtype=np.int64)
    n = len(vox)
    if n == 0:
        raise CorridorError("empty path")
    if grid.states[tuple(vox[0])] != FREE:
        raise CorridorError(f"first path voxel {tuple(vox[0])} is not free")
    dims = np.array(grid.dims, dtype=np.int64)
    states = grid.states
    polys: list[Polyhedron] = []
    i = 0
    while len(polys) < p_hor:
        j_hi = min(i + 1, n - 1)
        lo = np.minimum(vox[i], vox[j_hi]).copy()
        hi = np.maximum(vox[i], vox[j_hi]).copy()
        if not (states[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] == FREE).all():
            # Diagonal segment AABB clipped an occupied corner: seed from
            # the single current voxel instead.
            lo = vox[i].copy()
            hi = vox[i].copy()
        alive = [True] * 6
        while any(alive):
            for f in range(6):
                if not alive[f]:
                    continue
                axis, side = divmod(f, 2)
                a_lo, a_hi = lo.copy(), hi.copy()
                if side == 0:
                    a_lo[axis] -= 1
                    a_hi[axis] = a_lo[axis]
                    if a_lo[axis] < 0:
                        alive[f] = False
                        continue
                else:
                    a_hi[axis] += 1
                    a_lo[axis] = a_hi[axis]
                    if a_hi[axis] >= dims[axis]:
                        alive[f] = False
                        continue
                layer = states[a_lo[0]:a_hi[0] + 1, a_lo[1]:a_hi[1] + 1, a_lo[2]:a_hi[2] + 1]
                if (layer == FREE).all():
                    if side == 0:
                        lo[axis] -= 1
                    else:
                        hi[axis] += 1
                else:
                    alive[f] = False
        polys.append(_cuboid_polyhedron(grid, lo, hi, d_rad))
        j = i
        while j + 1 < n and np.all(vox[j + 1] >= lo) and np.all(vox[j + 1] <= hi):
            j += 1
        if j >= n - 1:
            break
        if j == i:
            j = i + 1  # single-voxel seed fallback: force progress
        i = j
    return polys


def separating_hyperplane(p_self, p_other, d_rad: float) -> Halfspace:
    """Bisector plane between two positions, pulled back d_rad toward
    p_self; both agents applying it symmetrically keeps them 2*d_rad
    apart."""
    p_self = np.asarray(p_self, dtype=np.float64)
    p_other = np.asarray(p_other, dtype=np.float64)
    diff = p_other - p_self
    dist = float(np.linalg.norm(diff))
    if dist < 1e-12:
        raise DegenerateGeometryError("coincident agent positions")
    n = diff / dist
    mid = 0.5 * (p_self + p_other)
    return Halfspace(n, float(n @ mid) - d_rad)


def polyhedron_nonempty(poly: Polyhedron, tol: float = 1e-7) -> bool:
    """Feasibility of the halfspace intersection: cheap alternating
    projections first, exact LP as the fallback."""
    a, c = poly.as_matrix()
    if poly.box_lo is not None:
        p = 0.5 * (poly.box_lo + poly.box_hi)
        if np.any(poly.box_lo > poly.box_hi + tol):
            return False
    else:
        p = np.zeros(3)
    for _ in range(80):
        viol = a @ p - c
        worst = float(viol.max()) if len(viol) else 0.0
        if worst <= tol:
            return True
        j = int(np.argmax(viol))
        p = p - viol[j] * a[j]
    from scipy.optimize import linprog

    res = linprog(np.zeros(3), A_ub=a, b_ub=c, bounds=[(None, None)] * 3, method="highs")
    return res.status == 0


def assemble_time_aware(
    base: list[Polyhedron],
    own_pred: np.ndarray,
    others_pred,
    d_rad: float,
    cutoff: float | None = None,
    extra_margins=None,
) -> TimeAwareCorridor:
    """Build SC_k for k = 0..N-1 from the latest predictions.

    The corridor consumed next iteration constrains points k and k+1 with
    hyperplanes from both agents' predictions at step k+1 (the one-step
    time shift). Others beyond the cutoff add no hyperplane; coincident
    prediction pairs fall back to the last distinct pair along the horizon.
    """
    own_pred = np.asarray(own_pred, dtype=np.float64)
    big_n = len(own_pred) - 1
    others = [np.asarray(o, dtype=np.float64) for o in others_pred]
    if extra_margins is None:
        extra_margins = [0.0] * len(others)
    steps: list[list[Polyhedron]] = []
    feasible: list[bool] = []
    for k in range(big_n):
        planes: list[Halfspace] = []
        for o, margin in zip(others, extra_margins):
            if cutoff is not None and float(np.linalg.norm(own_pred[0] - o[0])) > cutoff:
                continue
            idx = k + 1
            while idx >= 0 and float(np.linalg.norm(o[idx] - own_pred[idx])) < 1e-12:
                idx -= 1
            if idx < 0:
                raise DegenerateGeometryError(
                    "all predicted positions coincide with another agent"
                )
            planes.append(separating_hyperplane(own_pred[idx], o[idx], d_rad + margin))
        step_polys = [p.augmented(planes) for p in base]
        steps.append(step_polys)
        feasible.append(any(polyhedron_nonempty(p) for p in step_polys))
    return TimeAwareCorridor(steps=steps, step_feasible=feasible)


def write_corridor_dump(path, polys: list[Polyhedron]) -> None:
    """Text dump, one halfspace per line: poly index, normal, offset."""
    with open(path, "w") as f:
        for i, poly in enumerate(polys):
            for h in poly.halfspaces:
                nx, ny, nz = h.normal
                f.write(f"{i} {nx:.9f} {ny:.9f} {nz:.9f} {h.offset:.9f}\n")
