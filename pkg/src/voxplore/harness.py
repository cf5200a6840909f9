"""Experiment orchestration: run seed x agent-count grids, write raw logs
and per-run metrics, and aggregate a comparison table.

Wall-clock timings go to separate files so the metrics CSV stays
byte-identical across reruns of the same seed and config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, serialize_config
from .sim import RunMetrics, SafetyViolation, Simulation
from .world import save_world

_TRAJ_HEADER = "t,agent_id,px,py,pz,vx,vy,vz,ax,ay,az"
_METRICS_HEADER = (
    "seed,n_agents,agent_id,flight_distance,mean_velocity,exploration_time,"
    "complete,timed_out,safety_ratio,min_pairwise,unknown,unreachable,"
    "unreached_reachable,solves,fallbacks,nodes_total"
)
_TIMINGS_HEADER = "seed,n_agents,agent_id,wall_mean_ms,wall_max_ms,wall_std_ms,overruns,solves"


@dataclass
class ExperimentReport:
    runs: list[RunMetrics] = field(default_factory=list)
    timed_out_runs: int = 0

    def by_agent_count(self) -> dict[int, list[RunMetrics]]:
        out: dict[int, list[RunMetrics]] = {}
        for r in self.runs:
            if r.timed_out:
                continue
            out.setdefault(r.n_agents, []).append(r)
        return out


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if x is None:
        return "-"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_single(cfg: ExperimentConfig, seed: int, n_agents: int, out_dir: str | None = None) -> RunMetrics:
    sim = Simulation(cfg, seed, n_agents)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        sim.out_dir = out_dir
        save_world(sim.world, os.path.join(out_dir, f"world_{seed}.txt"))
    metrics = sim.run()
    if out_dir:
        tag = f"{seed}_{n_agents}"
        with open(os.path.join(out_dir, f"traj_{tag}.csv"), "w") as f:
            f.write(_TRAJ_HEADER + "\n")
            n_rows = len(sim.logs[0])
            for row_i in range(n_rows):
                for aid in range(n_agents):
                    row = sim.logs[aid][row_i]
                    f.write(_fmt(row[0]) + f",{aid}," + ",".join(_fmt(v) for v in row[1:]) + "\n")
        with open(os.path.join(out_dir, f"solver_{tag}.csv"), "w") as f:
            f.write("t,agent_id,nodes,qp_iterations,status\n")
            for t, aid, nodes, qpi, status, _wall in sim.solver_rows:
                f.write(f"{_fmt(t)},{aid},{nodes},{qpi},{status}\n")
        with open(os.path.join(out_dir, f"solver_wall_{tag}.csv"), "w") as f:
            f.write("t,agent_id,wall_ms\n")
            for t, aid, _n, _q, _s, wall in sim.solver_rows:
                f.write(f"{_fmt(t)},{aid},{wall:.3f}\n")
    return metrics


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    seeds=None,
    agent_counts=None,
) -> ExperimentReport:
    """Run every (seed, agent_count) pair to termination or a cap, writing
    raw logs, per-run metrics and the aggregate table."""
    cfg.validate()
    seeds = list(seeds) if seeds is not None else list(cfg.values["run.seeds"])
    agent_counts = (
        list(agent_counts) if agent_counts is not None else list(cfg.values["run.agent_counts"])
    )
    out_dir = out_dir or cfg.values["run.out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        f.write(serialize_config(cfg))

    report = ExperimentReport()
    metrics_rows = []
    timing_rows = []
    for n_agents in agent_counts:
        for seed in seeds:
            run = run_single(cfg, seed, n_agents, out_dir)
            report.runs.append(run)
            if run.timed_out:
                report.timed_out_runs += 1
            for aid, am in enumerate(run.agents):
                metrics_rows.append(
                    [
                        run.seed, run.n_agents, aid, am.flight_distance, am.mean_velocity,
                        run.exploration_time, run.complete, run.timed_out,
                        run.safety_ratio, run.min_pairwise, run.unknown_count,
                        run.unreachable_count, run.unreached_reachable,
                        am.solves, am.fallbacks, am.nodes_total,
                    ]
                )
                timing_rows.append(
                    [run.seed, run.n_agents, aid, am.wall_mean_ms, am.wall_max_ms,
                     am.wall_std_ms, am.overruns, am.solves]
                )

    with open(os.path.join(out_dir, "metrics.csv"), "w") as f:
        f.write(_METRICS_HEADER + "\n")
        for row in metrics_rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    with open(os.path.join(out_dir, "timings.csv"), "w") as f:
        f.write(_TIMINGS_HEADER + "\n")
        for row in timing_rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    with open(os.path.join(out_dir, "table.txt"), "w") as f:
        f.write(render_table(report))
    return report


def _mms(values) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.max()), float(arr.std())


def render_table(report: ExperimentReport) -> str:
    """Comparison rows per agent count: mean / max / std per agent of each
    metric, plus the worst safety ratio across seeds."""
    lines = [
        "agents | flight distance (m) | flight velocity (m/s) | exploration time (s)"
        " | computation time (ms) | safety ratio"
    ]
    for n_agents, runs in sorted(report.by_agent_count().items()):
        dist = _mms([am.flight_distance for r in runs for am in r.agents])
        vel = _mms([am.mean_velocity for r in runs for am in r.agents])
        et = _mms([r.exploration_time for r in runs])
        wall_means = [am.wall_mean_ms for r in runs for am in r.agents if am.solves]
        wall_maxes = [am.wall_max_ms for r in runs for am in r.agents if am.solves]
        ratios = [r.safety_ratio for r in runs if r.safety_ratio is not None]
        ratio = f"{min(ratios):.2f}" if ratios else "-"
        wall = (
            f"{np.mean(wall_means):.1f} / {np.max(wall_maxes):.1f}"
            if wall_means
            else "- / -"
        )
        lines.append(
            f"{n_agents} | {dist[0]:.1f} / {dist[1]:.1f} / {dist[2]:.1f}"
            f" | {vel[0]:.2f} / {vel[1]:.2f} / {vel[2]:.2f}"
            f" | {et[0]:.1f} / {et[1]:.1f} / {et[2]:.1f}"
            f" | {wall} | {ratio}"
        )
    if report.timed_out_runs:
        lines.append(f"warning: {report.timed_out_runs} run(s) timed out and were excluded")
    return "\n".join(lines) + "\n"


__all__ = [
    "ExperimentReport",
    "run_experiment",
    "run_single",
    "render_table",
    "SafetyViolation",
]
