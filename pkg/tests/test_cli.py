"""End-to-end CLI tests on a desk-scale config: artifact layout, byte
determinism, baseline policies, report recomputation, and exit codes."""

import json

import numpy as np
import pytest

from edgeraft.cli import main
from edgeraft.config import load_config, resolve_config
from edgeraft.metrics import read_episode_csv
from edgeraft.sim import ConfigError

_TINY = {
    "cluster": {"n": 3, "t_min_ms": 150.0, "t_max_ms": 300.0},
    "latency": {"W": 100.0, "K": 5000.0},
    "nodes": {"iota": [4e9, 2e9, 1e9], "backlog": [2, 10, 20]},
    "geometry": {"distances": [[0.0, 60.0, 90.0], [60.0, 0.0, 120.0], [90.0, 120.0, 0.0]]},
    "env": {"epochs_per_episode": 5, "task_txs": 10},
    "agent": {"warmup_epochs": 4, "batch_size": 4, "hidden": [8, 8]},
    "run": {"trials": 2, "episodes": 3, "seed": 7, "moving_average_window": 2},
}


def _write_config(tmp_path, extra=None):
    cfg = json.loads(json.dumps(_TINY))
    if extra:
        for section, fields in extra.items():
            cfg.setdefault(section, {}).update(fields)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def _run_bytes(run_dir):
    return {
        p.name: p.read_bytes() for p in sorted(run_dir.glob("*")) if p.is_file()
    }


def test_train_emits_all_artifacts(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "resolved_config.json").exists()
    assert (out / "summary.csv").exists()
    for trial in range(2):
        assert (out / f"trial_{trial}.csv").exists()
        assert (out / f"trial_{trial}.nets").exists()
    chash, rows = read_episode_csv(out / "trial_0.csv")
    assert len(rows) == 3
    assert len(chash) == 64
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["run"]["trials"] == 2
    assert resolved["agent"]["alpha_critic"] == 1e-3  # defaults made explicit


def test_rerun_is_byte_identical(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    first = _run_bytes(out)
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    second = _run_bytes(out)
    assert first == second


def test_different_seeds_differ(tmp_path):
    cfg = _write_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(["train", "--config", str(cfg), "--out", str(out_a), "--seed", "7"])
    main(["train", "--config", str(cfg), "--out", str(out_b), "--seed", "8"])
    _, rows_a = read_episode_csv(out_a / "trial_0.csv")
    _, rows_b = read_episode_csv(out_b / "trial_0.csv")
    assert [r["total_reward"] for r in rows_a] != [r["total_reward"] for r in rows_b]


def test_baseline_policies_rank_as_expected(tmp_path):
    """fixed-node on the worst node scores below random, which scores below
    greedy on capacity for this distance-dominated cluster."""
    cfg = _write_config(tmp_path, extra={"run": {"episodes": 4, "trials": 1}})
    out = tmp_path / "run"
    for policy, flags in [
        ("random", []),
        ("greedy-iota", []),
        ("fixed-node", ["--node", "2"]),
    ]:
        assert main(["baseline", "--config", str(cfg), "--out", str(out),
                     "--policy", policy, *flags]) == 0

    def mean_reward(policy):
        _, rows = read_episode_csv(out / f"baseline_{policy}" / "trial_0.csv")
        return float(np.mean([r["total_reward"] for r in rows]))

    random_mean = mean_reward("random")
    greedy_mean = mean_reward("greedy-iota")
    worst_mean = mean_reward("fixed-node")
    assert greedy_mean > random_mean > worst_mean


def test_baseline_is_deterministic(tmp_path):
    cfg = _write_config(tmp_path, extra={"run": {"episodes": 2, "trials": 1}})
    out = tmp_path / "run"
    main(["baseline", "--config", str(cfg), "--out", str(out), "--policy", "random"])
    first = _run_bytes(out / "baseline_random")
    main(["baseline", "--config", str(cfg), "--out", str(out), "--policy", "random"])
    assert _run_bytes(out / "baseline_random") == first


def test_report_matches_independent_recompute(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "run"
    main(["train", "--config", str(cfg), "--out", str(out)])
    assert main(["report", "--out", str(out)]) == 0

    rewards = {}
    for trial in range(2):
        _, rows = read_episode_csv(out / f"trial_{trial}.csv")
        rewards[trial] = np.array([r["total_reward"] for r in rows])

    stats_lines = (out / "report" / "trial_stats.csv").read_text().splitlines()[2:]
    for line in stats_lines:
        trial, n, mean, std = line.split(",")
        arr = rewards[int(trial)]
        assert float(mean) == pytest.approx(arr.mean(), rel=1e-12)
        assert float(std) == pytest.approx(arr.std(), rel=1e-12)

    hist_lines = (out / "report" / "reward_histograms.csv").read_text().splitlines()[2:]
    counts = {}
    for line in hist_lines:
        trial = int(line.split(",")[0])
        counts[trial] = counts.get(trial, 0) + int(line.split(",")[3])
    assert counts == {0: 3, 1: 3}
    assert (out / "report" / "report.txt").read_text().count("best trial:") == 1


def test_report_without_trials_errors(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_config_key_rejected(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"cluster": {"n": 3, "bogus": 1}}))
    assert main(["train", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "bogus" in err


def test_missing_config_file_errors(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_invalid_fixed_node_errors(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    code = main(["baseline", "--config", str(cfg), "--out", str(tmp_path / "x"),
                 "--policy", "fixed-node", "--node", "9"])
    assert code == 2


def test_raft_check_passes_clean_build(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert main(["raft-check", "--config", str(cfg), "--runs", "6"]) == 0
    assert "0 violation(s)" in capsys.readouterr().out


def test_raft_check_catches_relaxed_commit_rule(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    code = main(["raft-check", "--config", str(cfg), "--runs", "3", "--unsafe-commit"])
    out = capsys.readouterr().out
    assert code == 1
    assert "VIOLATION" in out


def test_config_range_resolution_is_deterministic(tmp_path):
    raw = {
        "cluster": {"n": 4},
        "nodes": {"iota": {"min": 1e9, "max": 4e9}},
        "run": {"seed": 3},
    }
    a = resolve_config(json.loads(json.dumps(raw)))
    b = resolve_config(json.loads(json.dumps(raw)))
    assert a.resolved["nodes"]["iota"] == b.resolved["nodes"]["iota"]
    assert a.resolved["geometry"]["distances"] == b.resolved["geometry"]["distances"]
    assert a.config_hash() == b.config_hash()
    c = resolve_config({**json.loads(json.dumps(raw)), "run": {"seed": 4}})
    assert a.resolved["nodes"]["iota"] != c.resolved["nodes"]["iota"]


def test_loaded_config_round_trips_through_resolved_file(tmp_path):
    cfg_path = _write_config(tmp_path)
    cfg = load_config(cfg_path)
    out = tmp_path / "resolved"
    resolved_path = cfg.write_resolved(out)
    again = load_config(resolved_path)
    assert again.resolved == cfg.resolved
    assert again.config_hash() == cfg.config_hash()
