"""Corridor-constrained trajectory MIQP.

States are condensed onto the jerk inputs (the model is linear), so each
branch-and-bound node solves a small strictly convex QP over u alone.
Fixing a membership binary to 1 adds that polyhedron's face rows as hard
constraints; fixing to 0 removes the option (forcing the last remaining
polyhedron of a step to 1). Node relaxations drop the remaining membership
disjunctions entirely, which keeps every node a clean QP and still lower-
bounds the mixed-integer optimum.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass

import numpy as np

from .corridor import TimeAwareCorridor
from .mpc import DiscreteState, MpcParams, ReferenceTrajectory, Trajectory, euler_step
from .qp import FactoredHessian, QPResult, kkt_residual, solve_qp

_HARVEST_TOL = 1e-7
_CONST_TOL = 1e-9


@dataclass
class SolveStats:
    status: str  # optimal | infeasible | node_cap
    objective: float = np.inf
    nodes: int = 0
    qp_iterations: int = 0
    wall_ms: float = 0.0
    kkt_residual: float = np.nan
    gap_unproven: bool = False
    qp_stalls: int = 0


@dataclass
class MiqpResult:
    trajectory: Trajectory | None
    stats: SolveStats


class CondensedModel:
    """Linear maps from (x0, u) to stacked states, plus the objective
    Hessian; depends only on MpcParams."""

    def __init__(self, params: MpcParams):
        n = params.n_steps
        h = params.h
        nu = 3 * n
        self.params = params
        self.nu = nu

        # Per-axis little transition matrices for [p, v, a].
        t_small = np.zeros((n + 1, 3, 3, n))  # [k, axis, comp, input step]
        s_small = np.zeros((n + 1, 3, 3, 3))  # [k, axis, comp, x0 comp]
        for ax in range(3):
            d = params.drag[ax]
            a_mat = np.array([[1.0, h, 0.0], [0.0, 1.0 - h * d, h], [0.0, 0.0, 1.0]])
            b_vec = np.array([0.0, 0.0, h])
            s_small[0, ax] = np.eye(3)
            for k in range(1, n + 1):
                s_small[k, ax] = a_mat @ s_small[k - 1, ax]
                t_small[k, ax] = a_mat @ t_small[k - 1, ax]
                t_small[k, ax][:, k - 1] += b_vec

        # u_flat layout: u_flat[3*j + axis].
        self.pos_map = np.zeros((n + 1, 3, nu))
        self.vel_map = np.zeros((n + 1, 3, nu))
        self.acc_map = np.zeros((n + 1, 3, nu))
        for k in range(n + 1):
            for ax in range(3):
                for j in range(n):
                    self.pos_map[k, ax, 3 * j + ax] = t_small[k, ax, 0, j]
                    self.vel_map[k, ax, 3 * j + ax] = t_small[k, ax, 1, j]
                    self.acc_map[k, ax, 3 * j + ax] = t_small[k, ax, 2, j]

        # Stacked component map, component order (px..pz, vx..vz, ax..az).
        xs = np.zeros(((n + 1) * 9, nu))
        sx = np.zeros(((n + 1) * 9, 9))
        for k in range(n + 1):
            for kind, m in enumerate((self.pos_map, self.vel_map, self.acc_map)):
                for ax in range(3):
                    row = k * 9 + 3 * kind + ax
                    xs[row] = m[k, ax]
                    for kind0 in range(3):
                        sx[row, 3 * kind0 + ax] = s_small[k, ax, kind, kind0]
        self.state_from_u = xs
        self.state_from_x0 = sx

        w = np.zeros((n + 1) * 9)
        for k in range(n):
            w[k * 9:(k + 1) * 9] = params.r_x
        w[n * 9:] = params.r_n
        self.weights = w
        q_mat = xs.T @ (w[:, None] * xs)
        q_mat[np.arange(nu), np.arange(nu)] += np.tile(params.r_u, n)
        self.hess = FactoredHessian(2.0 * q_mat)
        self.q_mat = q_mat

        # Base inequality rows (x0-independent normals).
        rows = []
        rhs_kind = []  # (kind, k, ax, sign) to fill rhs per solve
        for k in range(n):
            for ax in range(3):
                r = np.zeros(nu)
                r[3 * k + ax] = 1.0
                rows.append(r)
                rhs_kind.append(("jerk", k, ax, +1))
                rows.append(-r)
                rhs_kind.append(("jerk", k, ax, -1))
        for k in range(1, n):
            for ax in range(3):
                rows.append(self.acc_map[k, ax])
                rhs_kind.append(("acc", k, ax, +1))
                rows.append(-self.acc_map[k, ax])
                rhs_kind.append(("acc", k, ax, -1))
        self.base_rows = np.array(rows)
        self.base_kind = rhs_kind


_model_cache: dict[tuple, CondensedModel] = {}


def _model_for(params: MpcParams) -> CondensedModel:
    key = (
        params.n_steps, params.h, tuple(params.drag), tuple(params.a_max),
        params.a_z_min, tuple(params.j_max), tuple(params.r_x),
        tuple(params.r_n), tuple(params.r_u),
    )
    model = _model_cache.get(key)
    if model is None:
        model = CondensedModel(params)
        _model_cache[key] = model
    return model


class _Problem:
    """One solve_miqp instance: x0-dependent constants and face data."""

    def __init__(self, model: CondensedModel, params: MpcParams,
                 x0: DiscreteState, ref: ReferenceTrajectory, tac: TimeAwareCorridor):
        self.model = model
        self.params = params
        n = params.n_steps
        x0_vec = np.concatenate([x0.p, x0.v, x0.a])
        xc = model.state_from_x0 @ x0_vec
        self.state_const = xc.reshape(n + 1, 9)
        self.pos_const = self.state_const[:, 0:3]
        self.acc_const = self.state_const[:, 6:9]

        ref_vec = np.concatenate(
            [np.hstack([ref.positions, ref.velocities, ref.accelerations])[k]
             for k in range(n + 1)]
        )
        delta = xc - ref_vec
        w = model.weights
        self.q_lin = model.state_from_u.T @ (w * delta)
        self.c0 = float(delta @ (w * delta))

        # Base inequality rhs for this x0.
        rhs = np.empty(len(model.base_kind))
        for i, (kind, k, ax, sign) in enumerate(model.base_kind):
            if kind == "jerk":
                rhs[i] = params.j_max[ax]
            else:
                const = self.acc_const[k, ax]
                if sign > 0:
                    rhs[i] = params.a_max[ax] - const
                else:
                    lo = params.a_z_min if ax == 2 else -params.a_max[ax]
                    rhs[i] = -lo + const
        self.base_rhs = rhs

        # Equalities: v_N = 0, a_N = 0.
        eq_rows = []
        eq_rhs = []
        for ax in range(3):
            eq_rows.append(model.vel_map[n, ax])
            eq_rhs.append(-self.state_const[n, 3 + ax])
        for ax in range(3):
            eq_rows.append(model.acc_map[n, ax])
            eq_rhs.append(-self.acc_const[n, ax])
        self.eq_rows = np.array(eq_rows)
        self.eq_rhs = np.array(eq_rhs)

        # Face matrices per (k, p).
        self.n_steps = n
        self.n_polys = len(tac.steps[0]) if tac.steps else 0
        self.faces = [[poly.as_matrix() for poly in step] for step in tac.steps]

    def objective(self, u: np.ndarray) -> float:
        return float(u @ self.model.q_mat @ u + 2.0 * self.q_lin @ u + self.c0)

    def positions_of(self, u: np.ndarray) -> np.ndarray:
        n = self.n_steps
        return self.pos_const + np.einsum("kau,u->ka", self.model.pos_map, u)

    def violation(self, positions: np.ndarray, k: int, p: int) -> float:
        """Worst face violation of polyhedron (k, p) over points k and
        k+1."""
        a, c = self.faces[k][p]
        v1 = float((a @ positions[k] - c).max())
        v2 = float((a @ positions[k + 1] - c).max())
        return max(v1, v2)

    def hard_rows(self, k: int, p: int):
        """Constraint rows for fixing b_kp = 1; returns None when the
        constant (uncontrollable) part is already violated."""
        a, c = self.faces[k][p]
        rows = []
        rhs = []
        for point in (k, k + 1):
            lin = a @ self.model.pos_map[point]  # (m, nu)
            const = a @ self.pos_const[point] - c  # (m,)
            for i in range(len(c)):
                norm = float(np.linalg.norm(lin[i]))
                if norm < 1e-12:
                    if const[i] > _CONST_TOL:
                        return None
                else:
                    rows.append(lin[i] / norm)
                    rhs.append(-const[i] / norm)
        return rows, rhs


def _propagate(fixings: dict, n_steps: int, n_polys: int):
    """Close fixings under 'at least one polyhedron per step': the last
    free binary of a step with all others 0 becomes 1. Returns None when a
    step has no options left."""
    fixings = dict(fixings)
    for k in range(n_steps):
        free = [p for p in range(n_polys) if (k, p) not in fixings]
        ones = [p for p in range(n_polys) if fixings.get((k, p)) == 1]
        if not free and not ones:
            return None
        if not ones and len(free) == 1:
            fixings[(k, free[0])] = 1
    return fixings


def solve_miqp(
    params: MpcParams,
    x0: DiscreteState,
    ref: ReferenceTrajectory,
    tac: TimeAwareCorridor,
    prev_binaries: np.ndarray | None = None,
    start_time: float = 0.0,
    max_nodes: int = 3000,
) -> MiqpResult:
    """Minimize the tracking objective subject to dynamics, bounds,
    terminal rest, and segment-in-polyhedron disjunctions; optimal within
    relative gap 1e-9 or Infeasible (trajectory None)."""
    t_wall = time.perf_counter()
    model = _model_for(params)
    n = params.n_steps
    if len(tac.steps) != n:
        raise ValueError(f"corridor has {len(tac.steps)} steps, expected {n}")
    prob = _Problem(model, params, x0, ref, tac)
    n_polys = prob.n_polys
    stats = SolveStats(status="infeasible")
    if n_polys == 0 or not all(tac.step_feasible):
        stats.wall_ms = (time.perf_counter() - t_wall) * 1e3
        return MiqpResult(None, stats)

    # The first few positions are momentum-determined (jerk reaches
    # position with three steps of delay); when they violate every
    # polyhedron of their step no branching can help.
    for k in range(min(3, n)):
        if all(prob.hard_rows(k, p) is None for p in range(n_polys)):
            stats.wall_ms = (time.perf_counter() - t_wall) * 1e3
            return MiqpResult(None, stats)

    incumbent_j = np.inf
    incumbent = None  # (u, pattern, qp_result, node_rows)

    def node_qp(fixings, warm_tags=None):
        rows = [r for r in model.base_rows]
        rhs = list(prob.base_rhs)
        tags = list(range(len(rhs)))
        for (k, p), val in sorted(fixings.items()):
            if val != 1:
                continue
            hard = prob.hard_rows(k, p)
            if hard is None:
                return None, None, None
            hrows, hrhs = hard
            for i, (hr, hb) in enumerate(zip(hrows, hrhs)):
                rows.append(hr)
                rhs.append(hb)
                tags.append(("pol", k, p, i))
        warm = None
        if warm_tags:
            tag_index = {t: i for i, t in enumerate(tags)}
            warm = [tag_index[t] for t in warm_tags if t in tag_index]
        res = solve_qp(
            model.hess, 2.0 * prob.q_lin, prob.eq_rows, prob.eq_rhs,
            np.array(rows), np.array(rhs), warm_active=warm,
        )
        if res.status == "stalled" and warm:
            stats.qp_stalls += 1
            res = solve_qp(
                model.hess, 2.0 * prob.q_lin, prob.eq_rows, prob.eq_rhs,
                np.array(rows), np.array(rhs),
            )
        if res.status == "stalled":
            stats.qp_stalls += 1
            return None, None, None
        if res.status != "optimal":
            return None, None, None
        active_tags = [tags[i] for i in res.active]
        return res, active_tags, (np.array(rows), np.array(rhs))

    def try_incumbent(u, fixings, qp_res, rows_rhs):
        nonlocal incumbent_j, incumbent
        positions = prob.positions_of(u)
        pattern = np.zeros((n, n_polys), dtype=np.uint8)
        for k in range(n):
            ok = False
            for p in range(n_polys):
                if fixings.get((k, p)) == 0:
                    continue
                if prob.violation(positions, k, p) <= _HARVEST_TOL:
                    pattern[k, p] = 1
                    ok = True
            if not ok:
                return False
        j = prob.objective(u)
        if j < incumbent_j - 1e-12:
            incumbent_j = j
            incumbent = (u.copy(), pattern, qp_res, rows_rhs)
        return True

    # Incumbent seed: the previous iteration's pattern shifted one step.
    if prev_binaries is not None and prev_binaries.shape == (n, n_polys):
        seed = np.vstack([prev_binaries[1:], prev_binaries[-1:]])
        fix = {(k, p): int(seed[k, p]) for k in range(n) for p in range(n_polys)}
        fix = _propagate(fix, n, n_polys)
        if fix is not None:
            res, _, rows_rhs = node_qp(fix)
            if res is not None:
                stats.nodes += 1
                stats.qp_iterations += res.iterations
                try_incumbent(res.x, fix, res, rows_rhs)

    # Best-first branch and bound.
    heap = []
    seq = 0
    heapq.heappush(heap, (-np.inf, seq, {}, None))
    while heap:
        bound, _, fixings, warm_tags = heapq.heappop(heap)
        margin = 1e-9 * max(1.0, abs(incumbent_j)) if np.isfinite(incumbent_j) else 0.0
        if bound >= incumbent_j - margin:
            break
        if stats.nodes >= max_nodes:
            stats.gap_unproven = True
            break
        fixings = _propagate(fixings, n, n_polys)
        if fixings is None:
            continue
        res, active_tags, rows_rhs = node_qp(fixings, warm_tags)
        stats.nodes += 1
        if res is None:
            continue
        stats.qp_iterations += res.iterations
        u = res.x
        j_rel = prob.objective(u)
        if j_rel >= incumbent_j - margin:
            continue
        if try_incumbent(u, fixings, res, rows_rhs):
            continue  # node solved integrally; bound equals its value
        # Branch on the most fractional implied membership among
        # unsatisfied steps.
        positions = prob.positions_of(u)
        best = None
        for k in range(n):
            satisfied = any(
                fixings.get((k, p)) != 0
                and prob.violation(positions, k, p) <= _HARVEST_TOL
                for p in range(n_polys)
            )
            if satisfied:
                continue
            for p in range(n_polys):
                if (k, p) in fixings:
                    continue
                viol = prob.violation(positions, k, p)
                b_tilde = min(1.0, max(0.0, 1.0 - viol / params.big_m))
                key = (abs(b_tilde - 0.5), k, p)
                if best is None or key < best[0]:
                    best = (key, k, p)
        if best is None:
            continue  # unsatisfied steps but no free binaries: dead end
        _, bk, bp = best
        for val in (1, 0):
            child = dict(fixings)
            child[(bk, bp)] = val
            seq += 1
            heapq.heappush(heap, (j_rel, seq, child, active_tags))

    stats.wall_ms = (time.perf_counter() - t_wall) * 1e3
    if incumbent is None:
        stats.status = "node_cap" if stats.gap_unproven else "infeasible"
        return MiqpResult(None, stats)

    u, pattern, qp_res, rows_rhs = incumbent
    stats.status = "optimal" if not stats.gap_unproven else "node_cap"
    stats.objective = incumbent_j
    rows, rhs = rows_rhs
    stats.kkt_residual = kkt_residual(
        model.hess, 2.0 * prob.q_lin, prob.eq_rows, prob.eq_rhs, rows, rhs, qp_res
    )

    # Reconstruct states by stepping the model exactly.
    jerks = u.reshape(n, 3)
    states = [x0]
    for k in range(n):
        states.append(euler_step(states[-1], jerks[k], params.h, params.drag))
    traj = Trajectory(
        positions=np.array([s.p for s in states]),
        velocities=np.array([s.v for s in states]),
        accelerations=np.array([s.a for s in states]),
        jerks=jerks.copy(),
        binaries=pattern,
        start_time=start_time,
        h=params.h,
    )
    return MiqpResult(traj, stats)
