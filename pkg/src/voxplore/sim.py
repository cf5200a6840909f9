"""Deterministic multi-rate exploration simulation.

One tick is 10 ms of simulated time. Within a tick the phases run in a
fixed order (bus delivery, sensing/mapping, hub merge + goals, per-agent
planning, state update), and every schedule derives from the tick index
alone, so identical seed and config replay bit-identically.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import ExperimentConfig
from .corridor import assemble_time_aware, build_corridor
from .frontier import (
    assign_goals,
    border_mask,
    cluster_borders,
    exploration_complete,
    write_cluster_dump,
)
from .grid import FREE, OCCUPIED, UNKNOWN, VoxelGrid, integrate_scan, merge_local_into_global, recenter
from .miqp import solve_miqp
from .mpc import DiscreteState, MpcParams, Trajectory, fallback_brake, sample_reference
from .pathing import (
    distance_field,
    dmp_push,
    intermediate_goal,
    jps_search,
    reachable_set,
    snap_to_mask,
    traversable_mask,
)
from .world import WorldModel, generate_world, sense_lidar

_CONN26 = np.ones((3, 3, 3), dtype=bool)

_ball_cache: dict[int, np.ndarray] = {}


def _ball_structure(radius: int) -> np.ndarray:
    out = _ball_cache.get(radius)
    if out is None:
        r = np.arange(-radius, radius + 1)
        d2 = r[:, None, None] ** 2 + r[None, :, None] ** 2 + r[None, None, :] ** 2
        out = d2 <= radius * radius
        _ball_cache[radius] = out
    return out


class SafetyViolation(RuntimeError):
    """Two agents closer than the minimum collision distance, or an agent
    inside the obstacle safety margin."""


class SimTimeout(RuntimeError):
    pass


@dataclass(order=True)
class _Msg:
    deliver_time: float
    seq: int
    channel: str = field(compare=False)
    payload: object = field(compare=False)


class MessageBus:
    """FIFO-per-channel delayed delivery: deliver_time = send_time + delay."""

    def __init__(self, delay: float = 0.0):
        self.delay = delay
        self._queue: list[_Msg] = []
        self._seq = 0

    def send(self, channel: str, payload, now: float) -> None:
        heapq.heappush(self._queue, _Msg(now + self.delay, self._seq, channel, payload))
        self._seq += 1

    def deliver_due(self, now: float):
        out = []
        while self._queue and self._queue[0].deliver_time <= now + 1e-12:
            msg = heapq.heappop(self._queue)
            out.append((msg.channel, msg.payload))
        return out


@dataclass
class AgentRuntime:
    id: int
    state: DiscreteState
    traj: Trajectory
    local: VoxelGrid
    goal: np.ndarray | None = None
    prev_ref: object = None
    last_binaries: np.ndarray | None = None


@dataclass
class AgentMetrics:
    flight_distance: float = 0.0
    mean_velocity: float = 0.0
    solves: int = 0
    fallbacks: int = 0
    nodes_total: int = 0
    wall_mean_ms: float = 0.0
    wall_max_ms: float = 0.0
    wall_std_ms: float = 0.0
    overruns: int = 0


@dataclass
class RunMetrics:
    seed: int
    n_agents: int
    exploration_time: float
    complete: bool
    timed_out: bool
    safety_ratio: float | None
    min_pairwise: float | None
    unknown_count: int
    unreachable_count: int
    unreached_reachable: int
    agents: list[AgentMetrics] = field(default_factory=list)


class Simulation:
    def __init__(self, cfg: ExperimentConfig, seed: int, n_agents: int,
                 world: WorldModel | None = None):
        cfg.validate()
        cfg.validate_starts(n_agents)
        self.cfg = cfg
        self.seed = seed
        self.n_agents = n_agents
        self.params: MpcParams = cfg.mpc_params()
        v = cfg.values
        self.dt = v["rates.sim_dt"]
        self.sensor_ticks = int(round(1.0 / v["rates.local_map_hz"] / self.dt))
        self.hub_ticks = int(round(1.0 / v["rates.global_map_hz"] / self.dt))
        self.plan_ticks = int(round(1.0 / v["rates.plan_hz"] / self.dt))
        self.plan_period = self.plan_ticks * self.dt
        vs = v["world.voxel_size"]
        self.vs = vs

        starts = [np.array(s) for s in cfg.agent_starts(n_agents)]
        size = (v["world.size_x"], v["world.size_y"], v["world.size_z"])
        if world is None:
            world = generate_world(
                seed, size, v["world.density"], v["world.radius"], v["world.height"],
                vs, clearance_points=starts, clearance_radius=v["world.clearance"],
            )
        self.world = world
        self.global_grid = VoxelGrid((0, 0, 0), world.truth_grid.dims, vs)

        local_dims = tuple(
            int(round(v[f"map.local_size_{ax}"] / vs)) for ax in ("x", "y", "z")
        )
        self.agents: list[AgentRuntime] = []
        for i, p in enumerate(starts):
            local = recenter(VoxelGrid((0, 0, 0), local_dims, vs), p)
            self.agents.append(
                AgentRuntime(
                    id=i,
                    state=DiscreteState.at_rest(p),
                    traj=Trajectory.hover(p, 0.0, self.params),
                    local=local,
                )
            )
        self.bus = MessageBus(v["bus.delay"])
        # Broadcast trajectories as delivered: the starting hover plans are
        # common knowledge (initial positions are known to every agent).
        self.latest_traj: dict[int, Trajectory] = {
            a.id: a.traj for a in self.agents
        }
        self._pending_maps: list[tuple[int, VoxelGrid]] = []
        self.tick_index = 0
        self.complete = False
        self.timed_out = False
        self.round_id = 0
        self._unknown_prev = None
        self.min_pairwise = np.inf
        self.logs: list[list] = [[] for _ in range(n_agents)]  # (t, p, v, a)
        self.solver_rows: list[tuple] = []  # (t, agent, nodes, qp_iters, status, wall_ms)
        self._motion_ticks = [0] * n_agents
        self._distance = [0.0] * n_agents
        self._cutoff = float(np.linalg.norm([v["map.local_size_x"], v["map.local_size_y"], v["map.local_size_z"]]))
        self._log_states(0.0)
        self._check_safety()

    # -- time ---------------------------------------------------------------

    @property
    def sim_time(self) -> float:
        return self.tick_index * self.dt

    # -- messaging ----------------------------------------------------------

    def _deliver(self, now: float) -> None:
        for channel, payload in self.bus.deliver_due(now):
            if channel == "map":
                self._pending_maps.append(payload)
            elif channel == "goal":
                goals = payload
                for agent in self.agents:
                    agent.goal = goals[agent.id]
            elif channel == "traj":
                sender, traj = payload
                self.latest_traj[sender] = traj

    # -- sensing ------------------------------------------------------------

    def _sense_targets(self, agent: AgentRuntime) -> np.ndarray | None:
        """Ray targets: unknown-in-local plus truth-occupied voxels. On a
        fresh map this equals the full per-voxel ray set; afterwards it
        skips rays whose outcome is already absorbed in the map."""
        if self.cfg.values["lidar.full_rays"]:
            return None
        truth = self.world.truth_grid
        local = agent.local
        mask = np.ones(truth.dims, dtype=bool)
        lo = np.maximum(0, local.origin_voxel)
        hi = np.minimum(truth.dims, local.origin_voxel + np.array(local.dims))
        if np.all(lo < hi):
            l_lo = lo - local.origin_voxel
            l_hi = hi - local.origin_voxel
            mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = (
                local.states[l_lo[0]:l_hi[0], l_lo[1]:l_hi[1], l_lo[2]:l_hi[2]] == UNKNOWN
            )
        mask |= truth.states == OCCUPIED
        return mask

    def _sensing_phase(self, t: float) -> None:
        v = self.cfg.values
        positions = [a.state.p for a in self.agents]
        for agent in self.agents:
            agent.local = recenter(agent.local, agent.state.p)
            cloud = sense_lidar(
                self.world, positions, agent.id, v["lidar.range"],
                target_mask=self._sense_targets(agent), body_radius=self.params.d_rad,
            )
            others = [p for j, p in enumerate(positions) if j != agent.id]
            agent.local = integrate_scan(
                agent.local, cloud, others, removal_radius=2 * self.params.d_rad
            )
            self.bus.send("map", (agent.id, agent.local), t)

    # -- hub ----------------------------------------------------------------

    def _hub_phase(self, t: float) -> None:
        v = self.cfg.values
        self._deliver(t)
        for _, grid in self._pending_maps:
            self.global_grid = merge_local_into_global(
                self.global_grid, grid, static_env=v["map.static_env"]
            )
        self._pending_maps.clear()

        truth = self.world.truth_grid.states
        g = self.global_grid.states
        if ((g == OCCUPIED) & (truth != OCCUPIED)).any() or (
            (g == FREE) & (truth == OCCUPIED)
        ).any():
            raise RuntimeError("global map disagrees with ground truth")
        unknown_count = int((g == UNKNOWN).sum())
        if self._unknown_prev is not None and unknown_count > self._unknown_prev:
            raise RuntimeError("unknown voxel count increased")
        self._unknown_prev = unknown_count

        reach_x = self._observable_reach()
        if exploration_complete(self.global_grid, reach_x):
            self.complete = True
            self._final_reach = reach_x
            return

        borders = border_mask(self.global_grid)
        clusters = cluster_borders(borders, self.global_grid)
        kept = [c for c in clusters if reach_x[c.potential_goal]]
        potential = [self.global_grid.center_of(c.potential_goal) for c in kept]
        assignment = assign_goals([a.state.p for a in self.agents], potential, self.round_id)
        self.round_id += 1
        self.bus.send("goal", assignment.goals, t)
        if v["debug.dump_clusters"] and getattr(self, "out_dir", None):
            write_cluster_dump(
                f"{self.out_dir}/clusters_{self.round_id:05d}.txt", kept, assignment
            )

    def _observable_reach(self) -> np.ndarray:
        """Voxels an agent can get its body to or observe from next to:
        the traversable-reachable flood expanded by the goal-snap radius.
        Feeds both the termination rule and the goal filter so they agree."""
        trav = traversable_mask(self.global_grid, self.params.d_rad)
        seeds = [self.global_grid.voxel_of(a.state.p) for a in self.agents]
        reach = reachable_set(self.global_grid, seeds, mask=trav)
        return ndimage.binary_dilation(reach, structure=_ball_structure(3))

    # -- planning -----------------------------------------------------------

    def _frontier_target(self, agent: AgentRuntime, trav: np.ndarray):
        """Nearest in-world border voxel of the agent's own map, snapped to
        traversable space; lets goal-less or path-blocked agents keep
        exploring so the termination rule stays reachable."""
        local = agent.local
        box = np.zeros(local.dims, dtype=bool)
        lo = np.maximum(0, -local.origin_voxel)
        hi = np.minimum(
            local.dims, np.array(self.world.truth_grid.dims) - local.origin_voxel
        )
        if np.any(lo >= hi):
            return None
        box[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
        unknown = (local.states == UNKNOWN) & box
        border = (local.states == FREE) & box & ndimage.binary_dilation(unknown, _CONN26)
        if not border.any():
            return None
        idxs = np.argwhere(border)
        centers = local.origin + (idxs + 0.5) * self.vs
        d2 = ((centers - agent.state.p) ** 2).sum(axis=1)
        lin = idxs[:, 0] + local.dims[0] * (idxs[:, 1] + local.dims[1] * idxs[:, 2])
        order = np.lexsort((lin, d2))
        for row in order[:20]:
            snapped = snap_to_mask(local, idxs[row], trav, 3)
            if snapped is not None:
                return snapped
        return None

    def _plan_agent(self, agent: AgentRuntime, t: float) -> None:
        v = self.cfg.values
        params = self.params
        local = agent.local
        x0 = agent.state
        trav = traversable_mask(local, params.d_rad)

        target = None
        if agent.goal is not None:
            ig = intermediate_goal(local, agent.goal)
            if ig is not None:
                target = snap_to_mask(local, ig, trav, 5)
        start = local.voxel_of(x0.p)
        if not local.in_bounds(start) or not trav[start]:
            start = snap_to_mask(local, np.clip(start, 0, np.array(local.dims) - 1), trav, 2)
        if start is None:
            return  # boxed in: keep current plan (terminal hover)

        path = None
        if target is not None:
            path = jps_search(local, start, target, trav)
        if path is None:
            target = self._frontier_target(agent, trav)
            if target is not None:
                path = jps_search(local, start, target, trav)
        if path is None:
            return  # nothing reachable: hover on the current plan

        field_ = distance_field(local)
        refined = dmp_push(
            local, field_, start, target, v["dmp.push_dist"], v["dmp.weight"], trav
        )
        if refined is None:
            return
        corridor = build_corridor(local, refined, params.p_hor, params.d_rad)

        n = params.n_steps
        h = params.h
        step_times = t + h * np.arange(n + 1)
        own_pred = np.array([agent.traj.position_at_step_time(tk) for tk in step_times])
        others_pred = []
        margins = []
        for j, other_traj in sorted(self.latest_traj.items()):
            if j == agent.id:
                continue
            others_pred.append(
                np.array([other_traj.position_at_step_time(tk) for tk in step_times])
            )
            staleness = t - other_traj.start_time
            margins.append(
                params.v_terminal * max(0.0, staleness - 2.0 * self.plan_period)
            )
        tac = assemble_time_aware(
            corridor, own_pred, others_pred, params.d_rad,
            cutoff=self._cutoff, extra_margins=margins,
        )

        ref = sample_reference(
            refined, x0, corridor, params,
            prev_ref=agent.prev_ref, x_n_pred=agent.traj.positions[-1],
        )
        agent.prev_ref = ref

        prev_b = agent.last_binaries
        if prev_b is not None and prev_b.shape != (n, len(corridor)):
            prev_b = None
        result = solve_miqp(
            params, x0, ref, tac, prev_binaries=prev_b, start_time=t,
            max_nodes=v["planner.max_nodes"],
        )
        stats = result.stats
        self.solver_rows.append(
            (t, agent.id, stats.nodes, stats.qp_iterations, stats.status, stats.wall_ms)
        )
        deadline = v["planner.deadline_ms"]
        overrun = deadline > 0 and stats.wall_ms > deadline
        if result.trajectory is None or overrun:
            agent.traj = fallback_brake(agent.traj, t)
            agent.last_binaries = None
        else:
            agent.traj = result.trajectory
            agent.last_binaries = result.trajectory.binaries
            self.bus.send("traj", (agent.id, agent.traj), t)

    # -- safety and logging ---------------------------------------------------

    def _check_safety(self) -> None:
        d_rad = self.params.d_rad
        ps = np.array([a.state.p for a in self.agents])
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                d = float(np.linalg.norm(ps[i] - ps[j]))
                self.min_pairwise = min(self.min_pairwise, d)
                if d < 2 * d_rad - 1e-9:
                    raise SafetyViolation(
                        f"agents {i} and {j} at distance {d:.4f} < {2 * d_rad}"
                    )
        truth = self.world.truth_grid
        r = int(np.ceil((d_rad + 0.5 * self.vs) / self.vs)) + 1
        for a in self.agents:
            c = np.array(truth.voxel_of(a.state.p))
            lo = np.maximum(0, c - r)
            hi = np.minimum(truth.dims, c + r + 1)
            occ = np.argwhere(
                truth.states[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] == OCCUPIED
            )
            for idx in occ:
                vlo = truth.origin + (idx + lo) * self.vs
                gap = np.maximum(np.maximum(vlo - a.state.p, a.state.p - (vlo + self.vs)), 0.0)
                if float(np.linalg.norm(gap)) < d_rad - 1e-9:
                    raise SafetyViolation(
                        f"agent {a.id} within {d_rad} m of an obstacle voxel"
                    )

    def _log_states(self, t: float) -> None:
        for a in self.agents:
            s = a.state
            self.logs[a.id].append(
                (t, *s.p.tolist(), *s.v.tolist(), *s.a.tolist())
            )

    # -- main loop ------------------------------------------------------------

    def tick(self) -> None:
        t = self.sim_time
        k = self.tick_index
        self._deliver(t)
        if k % self.sensor_ticks == 0:
            self._sensing_phase(t)
        if k % self.hub_ticks == 0:
            self._hub_phase(t)
            if self.complete:
                self.tick_index += 1
                return
        for agent in self.agents:
            if k % self.plan_ticks == agent.id % self.plan_ticks:
                self._deliver(t)
                self._plan_agent(agent, t)
        t_next = t + self.dt
        for i, agent in enumerate(self.agents):
            prev_p = agent.state.p
            agent.state = agent.traj.state_at_time(t_next)
            step = float(np.linalg.norm(agent.state.p - prev_p))
            self._distance[i] += step
            if step > 0.01 * self.dt:
                self._motion_ticks[i] += 1
        self.tick_index += 1
        self._check_safety()
        self._log_states(t_next)

    def run(self, max_sim_time: float | None = None, wall_cap: float | None = None) -> RunMetrics:
        v = self.cfg.values
        max_sim_time = max_sim_time if max_sim_time is not None else v["run.max_sim_time"]
        wall_cap = wall_cap if wall_cap is not None else v["run.wall_cap"]
        wall0 = time.perf_counter()
        while not self.complete:
            if self.sim_time >= max_sim_time or time.perf_counter() - wall0 > wall_cap:
                self.timed_out = True
                break
            self.tick()
        return self.compute_metrics()

    # -- metrics ----------------------------------------------------------------

    def compute_metrics(self) -> RunMetrics:
        d_rad = self.params.d_rad
        unknown = self.global_grid.states == UNKNOWN
        unknown_count = int(unknown.sum())
        if hasattr(self, "_final_reach"):
            reach = self._final_reach
        else:
            reach = self._observable_reach()
        reachable_free = (self.global_grid.states == FREE) & reach
        frontier_adj = ndimage.binary_dilation(reachable_free, _CONN26) & unknown
        unreached_reachable = int(frontier_adj.sum())
        agents_out = []
        for i in range(self.n_agents):
            rows = [r for r in self.solver_rows if r[1] == i]
            walls = np.array([r[5] for r in rows]) if rows else np.zeros(0)
            period_ms = self.plan_period * 1e3
            am = AgentMetrics(
                flight_distance=self._distance[i],
                mean_velocity=(
                    self._distance[i] / (self._motion_ticks[i] * self.dt)
                    if self._motion_ticks[i] > 0
                    else 0.0
                ),
                solves=len(rows),
                fallbacks=sum(1 for r in rows if r[4] == "infeasible"),
                nodes_total=int(sum(r[2] for r in rows)),
                wall_mean_ms=float(walls.mean()) if len(walls) else 0.0,
                wall_max_ms=float(walls.max()) if len(walls) else 0.0,
                wall_std_ms=float(walls.std()) if len(walls) else 0.0,
                overruns=int((walls > period_ms).sum()) if len(walls) else 0,
            )
            agents_out.append(am)
        return RunMetrics(
            seed=self.seed,
            n_agents=self.n_agents,
            exploration_time=self.sim_time,
            complete=self.complete,
            timed_out=self.timed_out,
            safety_ratio=(
                None if self.n_agents < 2 else float(self.min_pairwise / (2 * d_rad))
            ),
            min_pairwise=None if self.n_agents < 2 else float(self.min_pairwise),
            unknown_count=unknown_count,
            unreachable_count=unknown_count - unreached_reachable,
            unreached_reachable=unreached_reachable,
            agents=agents_out,
        )
