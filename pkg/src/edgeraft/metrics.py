"""Metrics pipeline: per-episode records, CSV emission, and report math.

Every CSV starts with a ``# config_hash=...`` comment line followed by a
header row; floats are written with ``repr`` so reruns are byte-identical.
Report outputs (per-trial mean/std, reward histograms, moving averages) are
pure functions of the raw CSVs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .ddpg import EpochLog


@dataclass
class EpisodeRecord:
    trial: int
    episode: int
    total_reward: float
    mean_reward: float
    moving_avg: float
    elections: int
    blocks: int
    stalls: int
    mean_tml: float
    mean_clbg: float
    mean_rcb: float


EPISODE_FIELDS = [
    "trial",
    "episode",
    "total_reward",
    "mean_reward",
    "moving_avg",
    "elections",
    "blocks",
    "stalls",
    "mean_tml",
    "mean_clbg",
    "mean_rcb",
]


def moving_average(values, window: int) -> list[float]:
    """Trailing moving average over up to ``window`` most recent values."""
    if window < 1:
        raise ValueError("window must be >= 1")
    out = []
    acc = 0.0
    vals = list(values)
    for i, v in enumerate(vals):
        acc += v
        if i >= window:
            acc -= vals[i - window]
        out.append(acc / min(i + 1, window))
    return out


def episode_records(trial: int, logs: list[EpochLog], window: int) -> list[EpisodeRecord]:
    """Collapse per-epoch logs into per-episode records with a moving average."""
    by_episode: dict[int, list[EpochLog]] = {}
    for row in logs:
        by_episode.setdefault(row.episode, []).append(row)
    episodes = sorted(by_episode)
    totals = [sum(r.reward for r in by_episode[e]) for e in episodes]
    moving = moving_average(totals, window)
    records = []
    for order, e in enumerate(episodes):
        rows = by_episode[e]
        committed = [r for r in rows if not r.stalled]
        blocks = len(committed)
        records.append(
            EpisodeRecord(
                trial=trial,
                episode=e,
                total_reward=totals[order],
                mean_reward=totals[order] / len(rows),
                moving_avg=moving[order],
                elections=sum(r.elections for r in rows),
                blocks=blocks,
                stalls=len(rows) - blocks,
                mean_tml=sum(r.tml for r in committed) / blocks if blocks else 0.0,
                mean_clbg=sum(r.clbg for r in committed) / blocks if blocks else 0.0,
                mean_rcb=sum(r.rcb for r in committed) / blocks if blocks else 0.0,
            )
        )
    return records


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_episode_csv(path: Path, records: list[EpisodeRecord], config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(EPISODE_FIELDS)
        for r in records:
            writer.writerow([_fmt(getattr(r, name)) for name in EPISODE_FIELDS])


def read_episode_csv(path: Path) -> tuple[str, list[dict]]:
    """Returns (config_hash, rows) with numeric fields parsed."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# config_hash="):
            raise ValueError(f"{path}: missing config hash line")
        config_hash = first.split("=", 1)[1]
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            rows.append(
                {
                    key: (int(raw[key]) if key in ("trial", "episode", "elections", "blocks", "stalls") else float(raw[key]))
                    for key in raw
                }
            )
    return config_hash, rows


def write_summary_csv(path: Path, records_by_trial: dict[int, list[EpisodeRecord]], config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["trial", "episodes", "mean_reward", "std_reward"])
        for trial in sorted(records_by_trial):
            totals = np.array([r.total_reward for r in records_by_trial[trial]])
            writer.writerow(
                [trial, totals.size, _fmt(float(totals.mean())), _fmt(float(totals.std()))]
            )


# ---------------------------------------------------------------------------
# Report computation (pure functions over raw episode rewards)
# ---------------------------------------------------------------------------

@dataclass
class TrialStats:
    trial: int
    episodes: int
    mean: float
    std: float


def trial_stats(trial: int, rewards) -> TrialStats:
    arr = np.asarray(rewards, dtype=float)
    return TrialStats(
        trial=trial, episodes=arr.size, mean=float(arr.mean()), std=float(arr.std())
    )


def reward_histogram(rewards, bins: int = 20) -> list[tuple[float, float, int]]:
    """(bin_lo, bin_hi, count) triples; a constant series gets a single bin."""
    arr = np.asarray(rewards, dtype=float)
    if arr.size == 0:
        return []
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        return [(lo, hi, int(arr.size))]
    counts, edges = np.histogram(arr, bins=bins, range=(lo, hi))
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))
    ]


def best_trial(stats: list[TrialStats]) -> TrialStats:
    """Highest mean reward; ties broken by the lower standard deviation."""
    if not stats:
        raise ValueError("no trials to rank")
    return min(stats, key=lambda t: (-t.mean, t.std, t.trial))


def write_report(
    out_dir: Path,
    rewards_by_trial: dict[int, list[float]],
    config_hash: str,
    window: int,
) -> Path:
    """Emit the per-trial stats table, histogram data, moving-average series,
    and a human-readable summary; returns the summary path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = [trial_stats(t, rewards_by_trial[t]) for t in sorted(rewards_by_trial)]

    with open(out_dir / "trial_stats.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["trial", "episodes", "mean_reward", "std_reward"])
        for s in stats:
            writer.writerow([s.trial, s.episodes, _fmt(s.mean), _fmt(s.std)])

    with open(out_dir / "reward_histograms.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["trial", "bin_lo", "bin_hi", "count"])
        for t in sorted(rewards_by_trial):
            for lo, hi, count in reward_histogram(rewards_by_trial[t]):
                writer.writerow([t, _fmt(lo), _fmt(hi), count])

    with open(out_dir / "moving_average.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["trial", "episode", "moving_avg"])
        for t in sorted(rewards_by_trial):
            for episode, avg in enumerate(moving_average(rewards_by_trial[t], window)):
                writer.writerow([t, episode, _fmt(avg)])

    best = best_trial(stats)
    summary_path = out_dir / "report.txt"
    with open(summary_path, "w") as fh:
        fh.write("trial  episodes  mean_reward          std_reward\n")
        for s in stats:
            fh.write(f"{s.trial:<6d} {s.episodes:<9d} {s.mean:<20.12g} {s.std:.12g}\n")
        fh.write(
            f"\nbest trial: {best.trial} "
            f"(mean={best.mean:.12g}, std={best.std:.12g}); "
            f"ranked by highest mean, then lowest std\n"
        )
    return summary_path
