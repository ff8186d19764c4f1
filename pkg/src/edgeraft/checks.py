"""Randomized safety campaigns and targeted protocol checks.

The campaign throws seeded fault schedules (crashes, recoveries,
partitions) at whole-cluster simulations and collects every safety
violation the tracker sees.  ``commit_rule_scenario`` is a hand-built
interleaving that loses a committed entry when the current-term commit
restriction is relaxed; it proves the checker can actually catch
violations and documents why the restriction exists.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .latency import ClusterGeometry, LatencyParams
from .raft import (
    AppendEntries,
    BlockPayload,
    ClientTask,
    LogEntry,
    RaftNodeState,
    Role,
    handle_client_task,
    handle_message,
    make_node,
    on_election_timeout,
)
from .sim import (
    ClusterSim,
    CrashNode,
    Partition,
    RecoverNode,
    SafetyTracker,
    SimConfig,
    check_log_matching,
)


def random_fault_schedule(
    rng: random.Random, n: int, horizon_us: int
) -> list[tuple[int, object]]:
    """Crash/recover cycles plus an optional partition, capped at
    floor((n-1)/2) concurrently crashed nodes."""
    schedule: list[tuple[int, object]] = []
    f = (n - 1) // 2
    if f < 1:
        return schedule
    cycles = rng.randint(1, 3)
    window = horizon_us // (cycles + 1)
    for c in range(cycles):
        k = rng.randint(1, f)
        victims = rng.sample(range(n), k)
        base = window * c + horizon_us // 10
        start = base + rng.randint(0, window // 2)
        duration = rng.randint(window // 4, window // 2)
        for v in victims:
            schedule.append((start, CrashNode(v)))
            schedule.append((start + duration, RecoverNode(v)))
    if rng.random() < 0.7:
        k = rng.randint(1, f)
        group = set(rng.sample(range(n), k))
        blocked = frozenset(
            frozenset((a, b)) for a in group for b in range(n) if b not in group
        )
        start = horizon_us // 5 + rng.randint(0, horizon_us // 3)
        heal = start + rng.randint(horizon_us // 10, horizon_us // 3)
        schedule.append((start, Partition(blocked)))
        schedule.append((heal, Partition(frozenset())))
    schedule.sort(key=lambda item: item[0])
    return schedule


def _campaign_config(n: int, rng: random.Random) -> SimConfig:
    # links must be fast relative to the 150-300ms timeout window or
    # elections livelock; W=100 keeps the worst one-way delay under ~25ms
    d = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d[i][j] = d[j][i] = rng.uniform(50.0, 150.0)
    return SimConfig(
        n=n,
        params=LatencyParams(W=100.0),
        geometry=ClusterGeometry(d),
        iota=[rng.uniform(1e9, 4e9) for _ in range(n)],
        task_rate=20.0,
        task_txs=4,
    )


@dataclass
class CampaignResult:
    runs: int
    blocks_committed: int
    violations: list[str]


def safety_campaign(
    runs: int,
    cluster_sizes: tuple[int, ...] = (3, 5, 7),
    seed0: int = 0,
    horizon_s: float = 3.0,
    relaxed_commit: bool = False,
    progress=None,
) -> CampaignResult:
    """Run seeded fault-injected simulations and gather safety violations.

    Each run reports violations prefixed with its (seed, n) pair so any
    failure is immediately reproducible.
    """
    horizon_us = int(horizon_s * 1e6)
    violations: list[str] = []
    blocks = 0
    for i in range(runs):
        n = cluster_sizes[i % len(cluster_sizes)]
        seed = seed0 + i
        sched_rng = random.Random(seed * 1_000_003 + 17)
        config = _campaign_config(n, sched_rng)
        sim = ClusterSim(config, seed)
        for node in sim.nodes:
            node.unsafe_relaxed_commit = relaxed_commit
        for at, directive in random_fault_schedule(sched_rng, n, horizon_us):
            sim.inject(at, directive)
        sim.run_until(t_us=horizon_us)
        blocks += sim.blocks_committed
        for v in sim.all_violations():
            violations.append(f"seed={seed} n={n}: {v}")
        if progress is not None and (i + 1) % 100 == 0:
            progress(i + 1, runs)
    return CampaignResult(runs=runs, blocks_committed=blocks, violations=violations)


def liveness_campaign(
    seeds: int,
    cluster_sizes: tuple[int, ...] = (3, 5, 7),
    t_min_ms: float = 150.0,
    t_max_ms: float = 300.0,
) -> list[str]:
    """No-fault elections: a leader must emerge within 10 x T_max."""
    failures = []
    bound_us = int(10 * t_max_ms * 1000)
    for i in range(seeds):
        n = cluster_sizes[i % len(cluster_sizes)]
        rng = random.Random(i * 31 + 5)
        config = _campaign_config(n, rng)
        sim = ClusterSim(config, seed=i)
        sim.run_until(t_us=bound_us, predicate=lambda s: s.find_leader() is not None)
        if sim.find_leader() is None:
            failures.append(f"seed={i} n={n}: no leader within {bound_us}us")
    return failures


# ---------------------------------------------------------------------------
# Commit-rule mutation scenario
# ---------------------------------------------------------------------------

def commit_rule_scenario(relaxed_commit: bool) -> list[str]:
    """Five-node interleaving where relaxing the commit rule loses an entry.

    A leader replicates an old-term entry onto a majority and then fails;
    a rival whose log beats it on term then overwrites that index.  With
    the current-term restriction nothing was committed, so nothing is
    lost; with the relaxed rule the tracker reports leader-completeness
    and state-machine-safety violations.
    """
    rng = random.Random(7)
    tracker = SafetyTracker()
    nodes = [make_node(i, 5, 0, rng) for i in range(5)]
    for node in nodes:
        node.unsafe_relaxed_commit = relaxed_commit

    def deliver(idx: int, msg) -> list:
        before_role = nodes[idx].role
        before_commit = nodes[idx].commit_index
        _, out = handle_message(nodes[idx], msg, 0, rng)
        if nodes[idx].role is Role.LEADER and before_role is not Role.LEADER:
            tracker.on_leader(nodes[idx])
        if nodes[idx].commit_index > before_commit:
            tracker.on_commit(nodes[idx], before_commit, nodes[idx].commit_index)
        return out

    def pick(msgs, dst):
        return next(m for m in msgs if m.dst == dst)

    entry_a = BlockPayload(task_id="block-A", tx_count=1)
    entry_b = BlockPayload(task_id="block-B", tx_count=1)

    # stage 1: node 0 led term 2 and replicated entry (term 2, index 1) to
    # node 1 only before losing contact with the rest of the cluster
    nodes[0].role = Role.LEADER
    nodes[0].current_term = 2
    nodes[0].voted_for = 0
    nodes[0].log = [LogEntry(term=2, index=1, block=entry_a)]
    nodes[0].next_index = {p: 2 for p in nodes[0].peers}
    nodes[0].match_index = {p: 0 for p in nodes[0].peers}
    nodes[0].match_index[1] = 1
    tracker.on_leader(nodes[0])
    nodes[1].current_term = 2
    nodes[1].log = [LogEntry(term=2, index=1, block=entry_a)]
    for i in (2, 3, 4):
        nodes[i].current_term = 2

    # stage 2: node 4 wins term 3 with votes from 2 and 3, appends its own
    # entry at index 1, and crashes before replicating it anywhere
    _, rv = on_election_timeout(nodes[4], 0, rng)
    for voter in (2, 3):
        reply = deliver(voter, pick(rv, voter))[0]
        deliver(4, reply)
    assert nodes[4].role is Role.LEADER and nodes[4].current_term == 3
    handle_client_task(nodes[4], ClientTask(src=-1, dst=4, payload=entry_b))

    # stage 3: node 0 recovers as a follower and wins term 4 (its log beats
    # the empty logs of 2 and 3; the first candidacy is a split vote)
    nodes[0].role = Role.FOLLOWER
    nodes[0].next_index = {}
    nodes[0].match_index = {}
    on_election_timeout(nodes[0], 0, rng)
    _, rv = on_election_timeout(nodes[0], 0, rng)  # term 4
    hb = []
    for voter in (1, 2):
        reply = deliver(voter, pick(rv, voter))[0]
        hb = deliver(0, reply) or hb
    assert nodes[0].role is Role.LEADER and nodes[0].current_term == 4

    # stage 4: node 0 replicates the term-2 entry to node 2, reaching a
    # majority {0, 1, 2}; only the relaxed rule dares to commit it
    reply = deliver(1, pick(hb, 1))[0]
    deliver(0, reply)
    reply = deliver(2, pick(hb, 2))[0]
    retry = deliver(0, reply)
    reply = deliver(2, pick(retry, 2))[0]
    deliver(0, reply)
    if relaxed_commit:
        assert nodes[0].commit_index == 1
    else:
        assert nodes[0].commit_index == 0

    # stage 5: node 4 learns of term 4, then wins term 5 on its fresher log
    # and overwrites index 1 everywhere it can reach
    deliver(4, pick(hb, 4))
    assert nodes[4].role is Role.FOLLOWER
    _, rv = on_election_timeout(nodes[4], 0, rng)  # term 5
    for voter in (2, 3):
        reply = deliver(voter, pick(rv, voter))[0]
        out = deliver(4, reply)
    hb5 = out
    for follower in (2, 3):
        reply = deliver(follower, pick(hb5, follower))[0]
        retry = deliver(4, reply)
        if retry:
            reply = deliver(follower, pick(retry, follower))[0]
            deliver(4, reply)

    return tracker.violations + check_log_matching(nodes)
