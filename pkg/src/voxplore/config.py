"""Experiment configuration: flat `section.key = value` text files over a
complete set of defaults, so an empty file reproduces the reference
quadrotor setup."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .mpc import MpcParams

_G0 = 9.81


def _defaults() -> dict:
    return {
        "world.size_x": 30.0,
        "world.size_y": 30.0,
        "world.size_z": 3.0,
        "world.density": 0.1,  # obstacles / m^2
        "world.radius": 0.35,
        "world.height": 3.0,
        "world.voxel_size": 0.3,
        "world.clearance": 1.0,  # obstacle-free disk around each start, m
        "agents.start_x": 1.35,
        "agents.start_y": 1.35,
        "agents.start_z": 1.35,
        "agents.spacing_x": 3.0,
        "lidar.range": 10.0,
        "lidar.full_rays": False,  # cast to every in-range voxel each scan
        "map.local_size_x": 20.0,
        "map.local_size_y": 30.0,
        "map.local_size_z": 3.0,
        "map.static_env": False,
        "rates.sim_dt": 0.01,
        "rates.local_map_hz": 10,
        "rates.global_map_hz": 5,
        "rates.plan_hz": 10,
        "bus.delay": 0.0,
        "mpc.n_steps": 12,
        "mpc.h": 0.1,
        "mpc.a_max": 0.7 * _G0,
        "mpc.a_z_min": -_G0,
        "mpc.j_max": 8.0,
        "mpc.drag": 1.0,
        "mpc.p_hor": 2,
        "mpc.r_x": 200.0,
        "mpc.r_n": 100.0,
        "mpc.r_u": 0.01,
        "mpc.v_samp": 3.5,
        "mpc.a_samp": 0.7 * _G0,
        "mpc.thresh_dist": 0.4,
        "mpc.d_rad": 0.3,
        "mpc.big_m": 0.0,  # 0 = derive from the local grid diagonal
        "dmp.push_dist": 0.6,
        "dmp.weight": 10.0,
        "planner.max_nodes": 3000,
        "planner.deadline_ms": 0.0,  # 0 = off; wall-clock fallback switch
        "run.seeds": [0, 1, 2, 3, 4],
        "run.agent_counts": [1, 2, 4],
        "run.max_sim_time": 600.0,
        "run.wall_cap": 600.0,
        "run.out_dir": "runs",
        "debug.dump_clusters": False,
        "debug.dump_corridors": False,
    }


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=_defaults)

    def __getitem__(self, key: str):
        return self.values[key]

    def mpc_params(self) -> MpcParams:
        v = self.values
        big_m = v["mpc.big_m"]
        if big_m <= 0:
            big_m = math.sqrt(
                v["map.local_size_x"] ** 2
                + v["map.local_size_y"] ** 2
                + v["map.local_size_z"] ** 2
            )
        a = v["mpc.a_max"]
        return MpcParams(
            n_steps=v["mpc.n_steps"],
            h=v["mpc.h"],
            a_max=(a, a, a),
            a_z_min=v["mpc.a_z_min"],
            j_max=(v["mpc.j_max"],) * 3,
            drag=(v["mpc.drag"],) * 3,
            p_hor=v["mpc.p_hor"],
            r_x=(v["mpc.r_x"],) * 3 + (0.0,) * 6,
            r_n=(v["mpc.r_n"],) * 3 + (0.0,) * 6,
            r_u=(v["mpc.r_u"],) * 3,
            big_m=big_m,
            v_samp=v["mpc.v_samp"],
            a_samp=v["mpc.a_samp"],
            thresh_dist=v["mpc.thresh_dist"],
            d_rad=v["mpc.d_rad"],
        )

    def agent_starts(self, n_agents: int):
        v = self.values
        return [
            (
                v["agents.start_x"] + i * v["agents.spacing_x"],
                v["agents.start_y"],
                v["agents.start_z"],
            )
            for i in range(n_agents)
        ]

    def validate(self) -> None:
        v = self.values
        if v["mpc.h"] <= 0 or v["rates.sim_dt"] <= 0:
            raise ConfigError("time steps must be positive")
        if v["world.density"] < 0:
            raise ConfigError("world.density must be nonnegative")
        if v["world.voxel_size"] <= 0:
            raise ConfigError("world.voxel_size must be positive")
        if v["mpc.d_rad"] < 0:
            raise ConfigError("mpc.d_rad must be nonnegative")
        for hz_key in ("rates.local_map_hz", "rates.global_map_hz", "rates.plan_hz"):
            period = 1.0 / v[hz_key] / v["rates.sim_dt"]
            if abs(period - round(period)) > 1e-9:
                raise ConfigError(f"{hz_key} must divide the sim tick rate")
        if not v["run.seeds"] or not v["run.agent_counts"]:
            raise ConfigError("run.seeds and run.agent_counts must be non-empty")
        if any(k < 1 for k in v["run.agent_counts"]):
            raise ConfigError("agent counts must be >= 1")

    def validate_starts(self, n_agents: int) -> None:
        v = self.values
        for sx, sy, sz in self.agent_starts(n_agents):
            if not (
                0 < sx < v["world.size_x"]
                and 0 < sy < v["world.size_y"]
                and 0 < sz < v["world.size_z"]
            ):
                raise ConfigError("agent start positions must lie inside the world")


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        elem = default[0] if default else 0
        return [type(elem)(tok) for tok in raw.split()]
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse `key = value` lines (# comments); unknown keys are rejected."""
    values = _defaults()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in values:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(raw, values[key])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from e
    cfg = ExperimentConfig(values)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(f.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key in sorted(cfg.values):
        val = cfg.values[key]
        if isinstance(val, bool):
            rendered = "true" if val else "false"
        elif isinstance(val, list):
            rendered = " ".join(repr(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            rendered = repr(val)
        else:
            rendered = str(val)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"
