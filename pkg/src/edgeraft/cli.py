"""Command-line front end: train, baseline, report, raft-check.

Exit status 0 on success; failures print one ``error: ...`` line to stderr
and exit nonzero.  All file outputs are deterministic for a fixed config
and seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checks import commit_rule_scenario, safety_campaign
from .config import RunConfig, load_config
from .ddpg import EpochLog, save_nets, train
from .env import MecEnv
from .metrics import (
    episode_records,
    read_episode_csv,
    write_episode_csv,
    write_report,
    write_summary_csv,
)
from .sim import ConfigError

POLICIES = ("random", "greedy-iota", "fixed-node")


def _build_env(cfg: RunConfig) -> MecEnv:
    return MecEnv(cfg.sim_config(), cfg.env_config())


def cmd_train(cfg: RunConfig) -> int:
    out = cfg.out_dir
    cfg.write_resolved(out)
    chash = cfg.config_hash()
    max_epochs = cfg.episodes * cfg.env_config().epochs_per_episode
    records_by_trial = {}
    for trial in range(cfg.trials):
        env = _build_env(cfg)
        nets, logs = train(env, cfg.agent_config(max_epochs), cfg.seed + trial)
        records = episode_records(trial, logs, cfg.window)
        write_episode_csv(out / f"trial_{trial}.csv", records, chash)
        save_nets(nets, out / f"trial_{trial}.nets")
        records_by_trial[trial] = records
        mean = sum(r.total_reward for r in records) / len(records)
        print(f"trial {trial}: {len(records)} episodes, mean episode reward {mean:.6g}")
    write_summary_csv(out / "summary.csv", records_by_trial, chash)
    print(f"wrote {cfg.trials} trial files to {out}")
    return 0


def _policy_fn(name: str, cfg: RunConfig, node: int):
    n = cfg.n
    iota = cfg.resolved["nodes"]["iota"]
    if name == "random":
        return lambda state, rng: rng.uniform(-1.0, 1.0, n)
    if name == "greedy-iota":
        fixed = np.full(n, -1.0)
        fixed[int(np.argmax(iota))] = 1.0
        return lambda state, rng: fixed.copy()
    if name == "fixed-node":
        if not 0 <= node < n:
            raise ConfigError(f"--node must be in [0, {n})")
        fixed = np.full(n, -1.0)
        fixed[node] = 1.0
        return lambda state, rng: fixed.copy()
    raise ConfigError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


def rollout(env: MecEnv, policy, total_epochs: int, seed: int) -> list[EpochLog]:
    """Drive the env with a hand policy; returns per-epoch logs shaped like
    the training log (loss and Q columns stay empty)."""
    rng = np.random.default_rng(seed)
    episode = 0
    env.reset(seed * 1_000_003 + episode)
    logs: list[EpochLog] = []
    for epoch in range(total_epochs):
        state = env.observe()
        _, reward, done = env.step(policy(state, rng))
        info = env.last_info
        breakdown = info.breakdown
        logs.append(
            EpochLog(
                epoch=epoch,
                episode=episode,
                reward=float(reward),
                critic_loss=None,
                mean_q=None,
                leader=info.leader,
                stalled=info.stalled,
                elections=info.elections,
                tml=breakdown.tml if breakdown else 0.0,
                clbg=breakdown.clbg if breakdown else 0.0,
                rcb=breakdown.rcb if breakdown else 0.0,
            )
        )
        if done:
            episode += 1
            env.reset(seed * 1_000_003 + episode)
    return logs


def cmd_baseline(cfg: RunConfig, policy_name: str, node: int) -> int:
    out = cfg.out_dir / f"baseline_{policy_name}"
    cfg.write_resolved(out)
    chash = cfg.config_hash()
    policy = _policy_fn(policy_name, cfg, node)
    max_epochs = cfg.episodes * cfg.env_config().epochs_per_episode
    records_by_trial = {}
    for trial in range(cfg.trials):
        env = _build_env(cfg)
        logs = rollout(env, policy, max_epochs, cfg.seed + trial)
        records = episode_records(trial, logs, cfg.window)
        write_episode_csv(out / f"trial_{trial}.csv", records, chash)
        records_by_trial[trial] = records
        mean = sum(r.total_reward for r in records) / len(records)
        print(f"baseline {policy_name} trial {trial}: mean episode reward {mean:.6g}")
    write_summary_csv(out / "summary.csv", records_by_trial, chash)
    return 0


def cmd_report(run_dir: Path) -> int:
    trial_files = sorted(run_dir.glob("trial_*.csv"))
    if not trial_files:
        raise ConfigError(f"no trial_*.csv files in {run_dir}")
    rewards_by_trial: dict[int, list[float]] = {}
    hashes = set()
    window = 20
    for path in trial_files:
        chash, rows = read_episode_csv(path)
        hashes.add(chash)
        if not rows:
            raise ConfigError(f"{path}: no episode rows")
        trial = rows[0]["trial"]
        rewards_by_trial[trial] = [row["total_reward"] for row in rows]
    if len(hashes) != 1:
        raise ConfigError(f"trial files carry {len(hashes)} different config hashes")
    resolved = run_dir / "resolved_config.json"
    if resolved.exists():
        import json

        window = json.loads(resolved.read_text())["run"]["moving_average_window"]
    summary = write_report(run_dir / "report", rewards_by_trial, hashes.pop(), window)
    print(summary.read_text(), end="")
    return 0


def cmd_raft_check(cfg: RunConfig, runs: int, unsafe_commit: bool) -> int:
    violations = []
    scenario = commit_rule_scenario(relaxed_commit=unsafe_commit)
    violations += [f"commit-rule scenario: {v}" for v in scenario]
    result = safety_campaign(
        runs=runs,
        seed0=cfg.seed,
        horizon_s=cfg.resolved["run"]["raft_check_horizon_s"],
        relaxed_commit=unsafe_commit,
        progress=lambda done, total: print(f"  {done}/{total} runs"),
    )
    violations += result.violations
    print(
        f"raft-check: {result.runs} runs, {result.blocks_committed} blocks committed, "
        f"{len(violations)} violation(s)"
    )
    for v in violations:
        print(f"VIOLATION {v}")
    return 1 if violations else 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeraft",
        description="Raft edge-cluster simulator with a learned leader-election bias",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override run.out_dir")
        p.add_argument("--trials", type=int, help="override run.trials")

    p_train = sub.add_parser("train", help="train the agent over seeded trials")
    common(p_train)
    p_base = sub.add_parser("baseline", help="run a hand policy with the same outputs")
    common(p_base)
    p_base.add_argument("--policy", required=True, choices=POLICIES)
    p_base.add_argument("--node", type=int, default=0, help="target of fixed-node")
    p_report = sub.add_parser("report", help="summarize a finished run directory")
    p_report.add_argument("--out", required=True, help="run directory holding trial CSVs")
    p_check = sub.add_parser("raft-check", help="randomized Raft safety campaign")
    common(p_check)
    p_check.add_argument("--runs", type=int, help="override run.raft_check_runs")
    p_check.add_argument(
        "--unsafe-commit",
        action="store_true",
        help="test-only: relax the commit rule to prove violations are caught",
    )
    return parser


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["run.seed"] = args.seed
    if getattr(args, "out", None) is not None:
        out["run.out_dir"] = args.out
    if getattr(args, "trials", None) is not None:
        out["run.trials"] = args.trials
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(Path(args.out))
        cfg = load_config(args.config, _overrides(args))
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "baseline":
            return cmd_baseline(cfg, args.policy, args.node)
        if args.command == "raft-check":
            runs = args.runs if args.runs is not None else cfg.resolved["run"]["raft_check_runs"]
            return cmd_raft_check(cfg, runs, args.unsafe_commit)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
