"""Receding-horizon planning pieces: the drag-augmented triple-integrator
model, reference sampling along the global path, and the braking fallback.

The discrete model per axis (drag d, step h):

    p' = p + h v
    v' = v + h (a - d v)
    a' = a + h u
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_G0 = 9.81  # m/s^2


@dataclass
class MpcParams:
    """Optimizer and sampling parameters; defaults follow the reference
    quadrotor setup."""

    n_steps: int = 12  # N
    h: float = 0.1  # s
    a_max: tuple = (0.7 * _G0, 0.7 * _G0, 0.7 * _G0)  # per-axis, m/s^2
    a_z_min: float = -_G0
    j_max: tuple = (8.0, 8.0, 8.0)  # m/s^3
    drag: tuple = (1.0, 1.0, 1.0)  # D_lin_max diagonal, 1/s
    p_hor: int = 2
    r_x: tuple = (200.0, 200.0, 200.0, 0, 0, 0, 0, 0, 0)
    r_n: tuple = (100.0, 100.0, 100.0, 0, 0, 0, 0, 0, 0)
    r_u: tuple = (0.01, 0.01, 0.01)
    big_m: float = 40.0  # m; must dominate the local grid diameter
    v_samp: float = 3.5  # m/s
    a_samp: float = 0.7 * _G0  # m/s^2
    thresh_dist: float = 0.4  # m
    d_rad: float = 0.3  # m

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.p_hor < 1:
            raise ValueError("p_hor must be >= 1")
        if self.big_m <= 0:
            raise ValueError("big_m must be positive")
        for w in (*self.r_x, *self.r_n, *self.r_u):
            if w < 0:
                raise ValueError("weights must be nonnegative")

    @property
    def v_terminal(self) -> float:
        """Drag-limited speed a_max/d on the least-draggy axis."""
        return max(a / d for a, d in zip(self.a_max, self.drag))


@dataclass
class DiscreteState:
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(3)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(3)
        self.a = np.asarray(self.a, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.p)) or not np.all(np.isfinite(self.v)) or not np.all(np.isfinite(self.a)):
            raise ValueError("state components must be finite")

    @classmethod
    def at_rest(cls, p) -> "DiscreteState":
        return cls(np.asarray(p, dtype=np.float64), np.zeros(3), np.zeros(3))


def euler_step(x: DiscreteState, u, h: float, drag) -> DiscreteState:
    """One explicit Euler step of the drag model."""
    u = np.asarray(u, dtype=np.float64)
    d = np.asarray(drag, dtype=np.float64)
    return DiscreteState(
        x.p + h * x.v,
        x.v + h * (x.a - d * x.v),
        x.a + h * u,
    )


@dataclass
class Trajectory:
    """Discrete plan on the shared clock: states at start_time + k*h,
    jerk inputs per step, and the polyhedron choice binaries."""

    positions: np.ndarray  # (N+1, 3)
    velocities: np.ndarray  # (N+1, 3)
    accelerations: np.ndarray  # (N+1, 3)
    jerks: np.ndarray  # (N, 3)
    binaries: np.ndarray  # (N, P) uint8
    start_time: float
    h: float

    @property
    def n_steps(self) -> int:
        return len(self.jerks)

    def state_at(self, k: int) -> DiscreteState:
        k = int(np.clip(k, 0, self.n_steps))
        return DiscreteState(self.positions[k], self.velocities[k], self.accelerations[k])

    def step_of_time(self, t: float) -> int:
        """Nearest plan step for a clock time, clamped to the horizon."""
        return int(np.clip(round((t - self.start_time) / self.h), 0, self.n_steps))

    def position_at_step_time(self, t: float) -> np.ndarray:
        return self.positions[self.step_of_time(t)]

    def state_at_time(self, t: float) -> DiscreteState:
        """Piecewise-linear interpolation between plan points, clamped at
        the ends. Between steps the position stays on the plan segment, the
        region the corridor constraints actually cover."""
        s = (t - self.start_time) / self.h
        if s <= 0.0:
            return self.state_at(0)
        if s >= self.n_steps:
            return self.state_at(self.n_steps)
        k = int(s)
        w = s - k
        return DiscreteState(
            (1 - w) * self.positions[k] + w * self.positions[k + 1],
            (1 - w) * self.velocities[k] + w * self.velocities[k + 1],
            (1 - w) * self.accelerations[k] + w * self.accelerations[k + 1],
        )

    @classmethod
    def hover(cls, p, start_time: float, params: MpcParams) -> "Trajectory":
        """At-rest plan used before the first solve and as a fallback base."""
        n = params.n_steps
        p = np.asarray(p, dtype=np.float64)
        return cls(
            positions=np.tile(p, (n + 1, 1)),
            velocities=np.zeros((n + 1, 3)),
            accelerations=np.zeros((n + 1, 3)),
            jerks=np.zeros((n, 3)),
            binaries=np.ones((n, 1), dtype=np.uint8),
            start_time=start_time,
            h=params.h,
        )


@dataclass
class ReferenceTrajectory:
    """Sampled targets for the optimizer; velocity/acceleration rows exist
    but carry zero weight."""

    positions: np.ndarray  # (N+1, 3)
    velocities: np.ndarray = field(default=None)
    accelerations: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.velocities is None:
            self.velocities = np.zeros_like(self.positions)
        if self.accelerations is None:
            self.accelerations = np.zeros_like(self.positions)


def _arc_profile(t: float, v_samp: float, a_samp: float) -> float:
    """Arc length of the sampling speed profile: accelerate from rest at
    a_samp, cruise at v_samp."""
    t_star = v_samp / a_samp
    if t <= t_star:
        return 0.5 * a_samp * t * t
    return v_samp * t - v_samp * v_samp / (2.0 * a_samp)


def _closest_arc(waypoints: np.ndarray, cum: np.ndarray, p: np.ndarray) -> float:
    """Arc-length coordinate of the closest point on the polyline."""
    if len(waypoints) == 1:
        return 0.0
    best_d2 = np.inf
    best_s = 0.0
    for i in range(len(waypoints) - 1):
        a, b = waypoints[i], waypoints[i + 1]
        ab = b - a
        denom = float(ab @ ab)
        t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0)) if denom > 0 else 0.0
        q = a + t * ab
        d2 = float((p - q) @ (p - q))
        if d2 < best_d2 - 1e-15:
            best_d2 = d2
            best_s = float(cum[i]) + t * float(np.sqrt(denom))
    return best_s


def _point_at_arc(waypoints: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    s = float(np.clip(s, 0.0, cum[-1]))
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(i, len(waypoints) - 2) if len(waypoints) > 1 else 0
    if len(waypoints) == 1:
        return waypoints[0].copy()
    seg = cum[i + 1] - cum[i]
    w = (s - cum[i]) / seg if seg > 0 else 0.0
    return (1 - w) * waypoints[i] + w * waypoints[i + 1]


def sample_reference(
    path,
    x0: DiscreteState,
    corridor,
    params: MpcParams,
    prev_ref: ReferenceTrajectory | None = None,
    x_n_pred=None,
) -> ReferenceTrajectory:
    """Sample the global path with the v_samp/a_samp profile from the
    agent's closest path point.

    The previous reference is kept unless the predicted terminal position
    has converged to within thresh_dist of it (or it violates the current
    corridor, which would break the reference invariant). Samples falling
    outside every corridor polyhedron are replaced by the last sample that
    was inside.
    """
    n = params.n_steps
    if prev_ref is not None and len(prev_ref.positions) == n + 1:
        converged = (
            x_n_pred is not None
            and float(np.linalg.norm(np.asarray(x_n_pred) - prev_ref.positions[-1]))
            <= params.thresh_dist
        )
        still_valid = all(
            any(poly.contains(p) for poly in corridor) for p in prev_ref.positions
        )
        if not converged and still_valid:
            # Keep the sampled program, shifted one step: planning periods
            # and reference samples share the same clock, so the kept
            # reference recedes with the horizon instead of dragging the
            # agent back toward its original anchor.
            kept = np.vstack([prev_ref.positions[1:], prev_ref.positions[-1:]])
            return ReferenceTrajectory(positions=kept)

    waypoints = np.asarray(path.waypoints, dtype=np.float64).reshape(-1, 3)
    steps = np.linalg.norm(np.diff(waypoints, axis=0), axis=1) if len(waypoints) > 1 else np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    s0 = _closest_arc(waypoints, cum, x0.p)

    positions = np.empty((n + 1, 3))
    last_inside = x0.p.copy()
    for k in range(n + 1):
        s = s0 + _arc_profile(k * params.h, params.v_samp, params.a_samp)
        cand = _point_at_arc(waypoints, cum, s)
        if any(poly.contains(cand) for poly in corridor):
            last_inside = cand
        positions[k] = last_inside
    return ReferenceTrajectory(positions=positions)


def fallback_brake(prev: Trajectory, now: float) -> Trajectory:
    """Shift the previous plan one step and extend the terminal hover; the
    result satisfies the previous corridor constraints at shifted
    indices."""
    n = prev.n_steps
    positions = np.vstack([prev.positions[1:], prev.positions[-1:]])
    velocities = np.vstack([prev.velocities[1:], prev.velocities[-1:]])
    accelerations = np.vstack([prev.accelerations[1:], prev.accelerations[-1:]])
    jerks = np.vstack([prev.jerks[1:], np.zeros((1, 3))])
    binaries = np.vstack([prev.binaries[1:], prev.binaries[-1:]])
    return Trajectory(
        positions=positions,
        velocities=velocities,
        accelerations=accelerations,
        jerks=jerks,
        binaries=binaries,
        start_time=now,
        h=prev.h,
    )
