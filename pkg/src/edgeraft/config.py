"""Run configuration: a single JSON file, schema-checked and self-describing.

Unknown keys are rejected with their full path; every default is made
explicit in the resolved config that each run writes back next to its
outputs, and the sha256 of that resolved text is stamped into every CSV.
Node capacities, backlogs, and distances may be given either explicitly or
as ranges that are sampled deterministically from the run seed.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

from .ddpg import AgentConfig
from .env import EnvConfig
from .latency import ClusterGeometry, LatencyParams
from .sim import ConfigError, SimConfig

_CLUSTER_DEFAULTS = {"n": 4, "t_min_ms": 150.0, "t_max_ms": 300.0, "heartbeat_ms": 50.0}
_LATENCY_DEFAULTS = {
    "K": 500.0,
    "beta": 1e6,
    "nu": 100.0,
    "H": 1e4,
    "U": 1e4,
    "B": 1e6,
    "W": 1.0,
    "M0": 1e-9,
    "varrho": 2.0,
    "upsilon_sigma": 0.0,
    "max_block_txs": 24,
    "alternative_hash_count": False,
}
_NODES_DEFAULTS = {"iota": {"min": 1e9, "max": 4e9}, "backlog": {"min": 0, "max": 0}}
_GEOMETRY_DEFAULTS = {"distances": {"d_min": 50.0, "d_max": 500.0}}
_SIM_DEFAULTS = {"task_rate": 20.0, "task_txs": 1, "max_events": 10_000_000}
_ENV_DEFAULTS = {
    "epochs_per_episode": 100,
    "q_max": 50,
    "task_txs": 8,
    "score_eps": 1e-9,
    "window_floor_frac": 0.25,
    "election_watchdog_events": 100_000,
    "commit_watchdog_events": 200_000,
    "settle_watchdog_events": 50_000,
    "stall_reward": -10.0,
}
_AGENT_DEFAULTS = {
    "alpha_critic": 1e-3,
    "alpha_actor": 1e-4,
    "discount": 0.99,
    "soft_kappa": 0.995,
    "noise_sigma": 0.1,
    "warmup_epochs": 64,
    "batch_size": 64,
    "refine_radius": 0.2,
    "refine_candidates": 16,
    "capacity": 100_000,
    "hidden": [64, 64],
}
_RUN_DEFAULTS = {
    "trials": 10,
    "episodes": 500,
    "seed": 1,
    "out_dir": "runs/out",
    "moving_average_window": 20,
    "policy_node": 0,
    "raft_check_runs": 1000,
    "raft_check_horizon_s": 3.0,
}
_SECTIONS = {
    "cluster": _CLUSTER_DEFAULTS,
    "latency": _LATENCY_DEFAULTS,
    "nodes": _NODES_DEFAULTS,
    "geometry": _GEOMETRY_DEFAULTS,
    "sim": _SIM_DEFAULTS,
    "env": _ENV_DEFAULTS,
    "agent": _AGENT_DEFAULTS,
    "run": _RUN_DEFAULTS,
}


def _merge_section(name: str, given, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{name}: must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(given)
    return merged


def _resolve_per_node(name: str, value, n: int, rng: random.Random, integer: bool):
    """A per-node field is either an explicit list of length n or a
    {min, max} range sampled once per node."""
    if isinstance(value, list):
        if len(value) != n:
            raise ConfigError(f"{name}: expected {n} entries, got {len(value)}")
        return [int(v) if integer else float(v) for v in value]
    if isinstance(value, dict):
        unknown = set(value) - {"min", "max"}
        if unknown:
            raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
        lo, hi = value.get("min"), value.get("max")
        if lo is None or hi is None or lo > hi:
            raise ConfigError(f"{name}: range needs min <= max")
        if integer:
            return [rng.randint(int(lo), int(hi)) for _ in range(n)]
        return [rng.uniform(float(lo), float(hi)) for _ in range(n)]
    raise ConfigError(f"{name}: must be a list or a {{min, max}} range")


def _resolve_distances(value, n: int, rng: random.Random) -> list[list[float]]:
    if isinstance(value, list):
        if len(value) != n or any(len(row) != n for row in value):
            raise ConfigError(f"geometry.distances: expected an {n}x{n} matrix")
        return [[float(v) for v in row] for row in value]
    if isinstance(value, dict):
        unknown = set(value) - {"d_min", "d_max"}
        if unknown:
            raise ConfigError(f"geometry.distances: unknown keys {sorted(unknown)}")
        lo, hi = value.get("d_min"), value.get("d_max")
        if lo is None or hi is None or not 0 < lo <= hi:
            raise ConfigError("geometry.distances: range needs 0 < d_min <= d_max")
        d = [[0.0] * n for _ in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                d[i][j] = d[j][i] = rng.uniform(float(lo), float(hi))
        return d
    raise ConfigError("geometry.distances: must be a matrix or a {d_min, d_max} range")


@dataclass
class RunConfig:
    resolved: dict

    @property
    def n(self) -> int:
        return self.resolved["cluster"]["n"]

    @property
    def seed(self) -> int:
        return self.resolved["run"]["seed"]

    @property
    def trials(self) -> int:
        return self.resolved["run"]["trials"]

    @property
    def episodes(self) -> int:
        return self.resolved["run"]["episodes"]

    @property
    def out_dir(self) -> Path:
        return Path(self.resolved["run"]["out_dir"])

    @property
    def window(self) -> int:
        return self.resolved["run"]["moving_average_window"]

    def latency_params(self) -> LatencyParams:
        return LatencyParams(**self.resolved["latency"])

    def geometry(self) -> ClusterGeometry:
        return ClusterGeometry(self.resolved["geometry"]["distances"])

    def sim_config(self) -> SimConfig:
        cluster = self.resolved["cluster"]
        sim = self.resolved["sim"]
        return SimConfig(
            n=cluster["n"],
            params=self.latency_params(),
            geometry=self.geometry(),
            iota=list(self.resolved["nodes"]["iota"]),
            backlog=list(self.resolved["nodes"]["backlog"]),
            t_min_ms=cluster["t_min_ms"],
            t_max_ms=cluster["t_max_ms"],
            heartbeat_ms=cluster["heartbeat_ms"],
            task_rate=sim["task_rate"],
            task_txs=sim["task_txs"],
            max_events=sim["max_events"],
        )

    def env_config(self) -> EnvConfig:
        return EnvConfig(**self.resolved["env"])

    def agent_config(self, max_epochs: int) -> AgentConfig:
        kwargs = dict(self.resolved["agent"])
        kwargs["hidden"] = tuple(kwargs["hidden"])
        return AgentConfig(max_epochs=max_epochs, **kwargs)

    def canonical_text(self) -> str:
        return json.dumps(self.resolved, sort_keys=True, indent=2) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    def write_resolved(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "resolved_config.json"
        path.write_text(self.canonical_text())
        return path


def resolve_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a raw config dict, apply CLI overrides, fill defaults, and
    sample any ranged per-node fields deterministically from the seed."""
    if not isinstance(raw, dict):
        raise ConfigError("config root: must be a JSON object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"config root: unknown sections {sorted(unknown)}")
    merged = {
        name: _merge_section(name, raw.get(name, {}), defaults)
        for name, defaults in _SECTIONS.items()
    }
    for key, value in (overrides or {}).items():
        section, field = key.split(".", 1)
        merged[section][field] = value

    n = merged["cluster"]["n"]
    if not isinstance(n, int) or n < 1:
        raise ConfigError("cluster.n: must be an integer >= 1")
    for field in ("trials", "episodes", "moving_average_window", "raft_check_runs"):
        v = merged["run"][field]
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"run.{field}: must be an integer >= 1")
    if not isinstance(merged["run"]["seed"], int):
        raise ConfigError("run.seed: must be an integer")
    if not 0 <= merged["run"]["policy_node"] < n:
        raise ConfigError("run.policy_node: must name a node in [0, n)")

    sample_rng = random.Random(merged["run"]["seed"] * 48611 + 7)
    merged["nodes"]["iota"] = _resolve_per_node(
        "nodes.iota", merged["nodes"]["iota"], n, sample_rng, integer=False
    )
    merged["nodes"]["backlog"] = _resolve_per_node(
        "nodes.backlog", merged["nodes"]["backlog"], n, sample_rng, integer=True
    )
    merged["geometry"]["distances"] = _resolve_distances(
        merged["geometry"]["distances"], n, sample_rng
    )

    cfg = RunConfig(resolved=merged)
    try:
        cfg.latency_params()
        cfg.geometry()
        cfg.sim_config()
        cfg.env_config()
        cfg.agent_config(max_epochs=1)
    except (ConfigError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    return resolve_config(raw, overrides)
