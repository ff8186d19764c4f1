"""Episodic environment that lets an agent bias Raft leader elections.

One decision epoch = one leadership round plus one block commit.  The
action is a per-node preference score: the environment rescales each
node's election-timeout window toward the minimum in proportion to its
normalized score, so high-scored nodes tend to time out first and win the
election.  The action never overrides the protocol, it only biases the
timers, so every Raft safety property holds no matter what the agent does.

The reward is the negated total round latency (migration + block
generation + round consensus) of the epoch's committed block.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .latency import LatencyBreakdown, NodeResources, round_latency
from .raft import BlockPayload
from .sim import ClusterSim, SimConfig


@dataclass
class EnvConfig:
    epochs_per_episode: int = 100
    q_max: int = 50
    task_txs: int = 8
    score_eps: float = 1e-9
    window_floor_frac: float = 0.25
    election_watchdog_events: int = 100_000
    commit_watchdog_events: int = 200_000
    settle_watchdog_events: int = 50_000
    stall_reward: float = -10.0

    def __post_init__(self) -> None:
        if self.epochs_per_episode < 1:
            raise ValueError("epochs_per_episode must be >= 1")
        if self.q_max < 1:
            raise ValueError("q_max must be >= 1")
        if self.task_txs < 1:
            raise ValueError("task_txs must be >= 1")
        if self.score_eps <= 0:
            raise ValueError("score_eps must be > 0")
        if not 0 <= self.window_floor_frac < 1:
            raise ValueError("window_floor_frac must be in [0, 1)")


@dataclass
class EpochInfo:
    epoch: int
    leader: Optional[int]
    stalled: bool
    breakdown: Optional[LatencyBreakdown]
    elections: int
    queue_len: int


class MecEnv:
    """reset(seed) -> state; step(action) -> (state, reward, done)."""

    def __init__(self, sim_config: SimConfig, env_config: EnvConfig | None = None):
        self.env_config = env_config or EnvConfig()
        # the environment injects exactly one task per epoch itself
        self.sim_config = replace(sim_config, task_rate=0.0)
        if self.env_config.task_txs > sim_config.params.max_block_txs:
            raise ValueError("task_txs exceeds max_block_txs")
        self.n = sim_config.n
        self.state_dim = 4 * self.n
        self.action_dim = self.n
        self.epochs_per_episode = self.env_config.epochs_per_episode
        self._t_lo_us = sim_config.t_min_ms * 1000.0
        self._t_width_us = (sim_config.t_max_ms - sim_config.t_min_ms) * 1000.0
        d = sim_config.geometry.d
        self._d_max = float(d.max()) if self.n > 1 else 1.0
        self._mean_dist = [
            float(np.delete(d[i], i).mean()) if self.n > 1 else 0.0 for i in range(self.n)
        ]
        self._max_iota = max(sim_config.iota)
        self.sim: Optional[ClusterSim] = None
        self.last_info: Optional[EpochInfo] = None
        self._epoch = 0

    def reset(self, seed: int) -> np.ndarray:
        """Fresh cluster; returns the all-zeros initial state vector."""
        self.sim = ClusterSim(self.sim_config, seed)
        self._epoch = 0
        self.last_info = None
        return np.zeros(self.state_dim)

    def observe(self) -> np.ndarray:
        obs = np.zeros(self.state_dim)
        sim = self.sim
        leader = sim.find_leader()
        for i in range(self.n):
            obs[4 * i] = sim.config.iota[i] / self._max_iota
            obs[4 * i + 1] = min(sim.resources[i].queue_len / self.env_config.q_max, 1.0)
            obs[4 * i + 2] = self._mean_dist[i] / self._d_max
            obs[4 * i + 3] = 1.0 if i == leader else 0.0
        return obs

    def analytic_round_latency(self, leader: int) -> LatencyBreakdown:
        """Latency-model prediction for one epoch led by ``leader``: the
        standing backlog plus the injected task, noise-free channel."""
        resources = [
            NodeResources(iota=v, backlog=b)
            for v, b in zip(self.sim_config.iota, self.sim_config.backlog)
        ]
        return round_latency(
            leader,
            self.sim_config.backlog[leader] + 1,
            self.env_config.task_txs,
            resources,
            self.sim_config.geometry,
            self.sim_config.params,
        )

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.sim is None:
            raise RuntimeError("call reset before step")
        a = np.asarray(action, dtype=float)
        if a.shape != (self.n,):
            raise ValueError(f"action must have shape ({self.n},), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("action contains non-finite components")

        # normalized preference scores shrink a node's whole timeout window
        # toward the minimum; the floor fraction keeps low-scored nodes'
        # windows strictly above the favorite's deadline so the head start
        # dominates message propagation differences
        scores = (a - a.min()) / (a.max() - a.min() + self.env_config.score_eps)
        sim = self.sim
        sim.force_stepdown()
        for i in range(self.n):
            shrink = 1.0 - scores[i]
            lo = self._t_lo_us + shrink * self.env_config.window_floor_frac * self._t_width_us
            hi = self._t_lo_us + shrink * self._t_width_us
            sim.rearm_node(i, lo, max(lo, hi))

        elections_before = sim.elections_started
        sim.run_until(
            predicate=lambda s: s.find_leader() is not None,
            max_events=self.env_config.election_watchdog_events,
        )
        leader = sim.find_leader()
        stalled = leader is None
        breakdown = None
        queue_len = 0
        if not stalled:
            payload = BlockPayload(
                task_id=f"epoch-{self._epoch}",
                tx_count=self.env_config.task_txs,
                tx_batch_bytes=int(self.env_config.task_txs * self.sim_config.params.K),
            )
            blocks_before = sim.blocks_committed
            sim.inject_task(payload)
            sim.run_until(
                predicate=lambda s: s.blocks_committed > blocks_before,
                max_events=self.env_config.commit_watchdog_events,
            )
            if sim.blocks_committed == blocks_before:
                stalled = True
            else:
                breakdown = sim.breakdowns[-1]
                queue_len = sim.resources[leader].queue_len + 1  # at commit the task left
                self._settle_replication()

        reward = self.env_config.stall_reward if stalled else -breakdown.total
        self._epoch += 1
        done = (not stalled) and self._epoch >= self.epochs_per_episode
        self.last_info = EpochInfo(
            epoch=self._epoch - 1,
            leader=sim.find_leader(),
            stalled=stalled,
            breakdown=breakdown,
            elections=sim.elections_started - elections_before,
            queue_len=queue_len,
        )
        return self.observe(), reward, done

    def _settle_replication(self) -> None:
        """Let the committed entry reach every node before the next epoch, so
        each election starts from identical logs."""
        sim = self.sim

        def settled(s: ClusterSim) -> bool:
            leader = s.find_leader()
            if leader is None:
                return False
            ref = s.nodes[leader]
            return all(
                n.last_log_index == ref.last_log_index and n.commit_index == ref.commit_index
                for i, n in enumerate(s.nodes)
                if s.alive[i]
            )

        sim.run_until(predicate=settled, max_events=self.env_config.settle_watchdog_events)
