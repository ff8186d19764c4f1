"""Seeded discrete-event simulator for a Raft edge cluster.

Owns the event queue and the single PRNG: message transport delays come
from the wireless link-rate model, cloud tasks arrive as a Poisson process
addressed to the current leader, and faults (crash / recover / partition)
are injected as scheduled events.  Events with equal timestamps are
processed in insertion order, so a (config, seed, schedule) triple fully
determines the run.

Simulated time is an integer microsecond counter.
"""

from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

from .latency import (
    ClusterGeometry,
    LatencyBreakdown,
    LatencyParams,
    NodeResources,
    block_generation_latency,
    consensus_latency,
    link_rate,
    migration_latency,
)
from .raft import (
    AppendEntries,
    BlockPayload,
    ClientTask,
    Message,
    RaftNodeState,
    Role,
    draw_deadline,
    handle_client_task,
    handle_message,
    leader_broadcast,
    make_node,
    on_election_timeout,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """A run configuration failed validation; message names the bad fields."""


class WatchdogError(RuntimeError):
    """The event budget was exhausted (livelock guard)."""


# event kinds, processed strictly by (time, insertion sequence)
DELIVER = 0
TIMEOUT = 1
HEARTBEAT = 2
TASK_ARRIVAL = 3
CRASH = 4
RECOVER = 5
PARTITION = 6


@dataclass(frozen=True)
class CrashNode:
    node: int


@dataclass(frozen=True)
class RecoverNode:
    node: int


@dataclass(frozen=True)
class Partition:
    """Replace the set of blocked links; empty set heals everything."""

    blocked: frozenset


FaultDirective = CrashNode | RecoverNode | Partition


class TraceRecord(NamedTuple):
    t_us: int
    node: int
    old_role: Role
    new_role: Role
    term: int
    commit_index: int


@dataclass
class SimConfig:
    n: int
    params: LatencyParams
    geometry: ClusterGeometry
    iota: list[float]
    backlog: Optional[list[int]] = None
    t_min_ms: float = 150.0
    t_max_ms: float = 300.0
    heartbeat_ms: float = 50.0
    task_rate: float = 20.0
    task_txs: int = 1
    max_events: int = 10_000_000

    def __post_init__(self) -> None:
        if self.backlog is None:
            self.backlog = [0] * self.n
        errors = []
        if self.n < 1:
            errors.append("n: must be >= 1")
        if self.geometry.size != self.n:
            errors.append(f"geometry: expected {self.n}x{self.n} distance matrix")
        if len(self.iota) != self.n:
            errors.append(f"iota: expected {self.n} values")
        elif any(v <= 0 for v in self.iota):
            errors.append("iota: all values must be > 0")
        if len(self.backlog) != self.n:
            errors.append(f"backlog: expected {self.n} values")
        elif any(b < 0 for b in self.backlog):
            errors.append("backlog: all values must be >= 0")
        if not 0 < self.t_min_ms < self.t_max_ms:
            errors.append("t_min_ms/t_max_ms: need 0 < t_min < t_max")
        if self.heartbeat_ms <= 0:
            errors.append("heartbeat_ms: must be > 0")
        if self.task_rate < 0:
            errors.append("task_rate: must be >= 0")
        if not 0 < self.task_txs <= self.params.max_block_txs:
            errors.append("task_txs: must be in [1, max_block_txs]")
        if self.max_events < 1:
            errors.append("max_events: must be >= 1")
        if errors:
            raise ConfigError("; ".join(errors))


class SafetyTracker:
    """Accumulates protocol-safety violations over one simulation trace."""

    def __init__(self) -> None:
        self.leaders_by_term: dict[int, int] = {}
        self.committed: dict[int, tuple[int, str]] = {}
        self.violations: list[str] = []

    def on_leader(self, state: RaftNodeState) -> None:
        term = state.current_term
        prev = self.leaders_by_term.get(term)
        if prev is not None and prev != state.id:
            self.violations.append(
                f"election safety: term {term} has leaders {prev} and {state.id}"
            )
        self.leaders_by_term[term] = state.id
        for index, (term_c, task) in self.committed.items():
            if (
                state.last_log_index < index
                or state.log[index - 1].term != term_c
                or state.log[index - 1].block.task_id != task
            ):
                self.violations.append(
                    f"leader completeness: node {state.id} leads term {term} "
                    f"without committed entry {index} (term {term_c})"
                )

    def on_commit(self, state: RaftNodeState, old_commit: int, new_commit: int) -> None:
        for index in range(old_commit + 1, new_commit + 1):
            if index > state.last_log_index:
                self.violations.append(
                    f"commit beyond log: node {state.id} committed {index}"
                )
                continue
            entry = state.log[index - 1]
            seen = self.committed.get(index)
            record = (entry.term, entry.block.task_id)
            if seen is None:
                self.committed[index] = record
            elif seen != record:
                self.violations.append(
                    f"state machine safety: index {index} committed as {seen} "
                    f"and as {record} (node {state.id})"
                )


def check_log_matching(nodes: list[RaftNodeState]) -> list[str]:
    """Pairwise log-matching check: equal (index, term) implies equal prefix."""
    violations = []
    for a in range(len(nodes)):
        for b in range(a + 1, len(nodes)):
            la, lb = nodes[a].log, nodes[b].log
            common = min(len(la), len(lb))
            anchor = 0
            for k in range(common, 0, -1):
                if la[k - 1].term == lb[k - 1].term:
                    anchor = k
                    break
            if anchor and la[:anchor] != lb[:anchor]:
                violations.append(
                    f"log matching: nodes {a}/{b} agree at index {anchor} "
                    f"but their prefixes differ"
                )
    return violations


@dataclass
class SimSummary:
    now_us: int
    elections_started: int
    leaders_elected: int
    max_term: int
    blocks_committed: int
    messages_delivered: int
    drops: int
    total_latency: LatencyBreakdown
    breakdowns: list[LatencyBreakdown]
    violations: list[str]


class _BlockMeta(NamedTuple):
    task_id: str
    tml: float
    leader: int


class ClusterSim:
    """One seeded cluster simulation; see module docstring."""

    def __init__(self, config: SimConfig, seed: int, trace: Optional[Callable] = None):
        self.config = config
        self.rng = random.Random(seed)
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.trace = trace

        lo = config.t_min_ms * 1000.0
        hi = config.t_max_ms * 1000.0
        self.heartbeat_us = max(1, int(round(config.heartbeat_ms * 1000.0)))
        self.retry_us = max(1, int(round(lo)))
        self.nodes = [make_node(i, config.n, 0, self.rng, lo, hi) for i in range(config.n)]
        self.resources = [
            NodeResources(iota=config.iota[i], backlog=config.backlog[i])
            for i in range(config.n)
        ]
        self.alive = [True] * config.n
        self.blocked: set[frozenset] = set()
        self.shadowing: dict[frozenset, float] = {}
        self._hb_epoch = [0] * config.n
        self._block_meta: dict[tuple[int, int], _BlockMeta] = {}
        self._recorded: set[tuple[int, int]] = set()
        self._task_hops: dict[str, int] = {}
        self._task_seq = 0

        self.events_processed = 0
        self.elections_started = 0
        self.leaders_elected = 0
        self.messages_delivered = 0
        self.drops = 0
        self.blocks_committed = 0
        self.breakdowns: list[LatencyBreakdown] = []
        self.tracker = SafetyTracker()

        for i, node in enumerate(self.nodes):
            self._schedule(node.election_deadline, TIMEOUT, i)
        if config.task_rate > 0:
            self._schedule(self._next_arrival_gap(), TASK_ARRIVAL, (self._new_payload(), True))

    # ------------------------------------------------------------------
    # scheduling
    # ------------------------------------------------------------------

    def _schedule(self, at: int, kind: int, payload) -> None:
        heapq.heappush(self._heap, (at, self._seq, kind, payload))
        self._seq += 1

    def _next_arrival_gap(self) -> int:
        return self.now + max(1, int(round(self.rng.expovariate(self.config.task_rate) * 1e6)))

    def _new_payload(self) -> BlockPayload:
        self._task_seq += 1
        txs = self.config.task_txs
        return BlockPayload(
            task_id=f"task-{self._task_seq}",
            tx_count=txs,
            tx_batch_bytes=int(txs * self.config.params.K),
        )

    def _transport_delay_us(self, msg: Message) -> int:
        size = self.config.params.H if isinstance(msg, AppendEntries) else self.config.params.U
        shadow = self.shadowing.get(frozenset((msg.src, msg.dst)), 1.0)
        rate = link_rate(msg.src, msg.dst, self.config.geometry, self.config.params, shadow)
        return max(1, int(round(size / rate * 1e6)))

    def _route(self, msgs: list[Message]) -> None:
        for msg in msgs:
            self._schedule(self.now + self._transport_delay_us(msg), DELIVER, msg)

    def _refresh_shadowing(self, leader: int) -> None:
        sigma = self.config.params.upsilon_sigma
        if sigma <= 0:
            return
        for peer in self.nodes[leader].peers:
            key = frozenset((leader, peer))
            self.shadowing[key] = self.rng.lognormvariate(0.0, sigma)

    # ------------------------------------------------------------------
    # event processing
    # ------------------------------------------------------------------

    def step(self) -> Optional[TraceRecord]:
        """Process the earliest pending event; returns a trace record if the
        event changed some node's role, term, or commit index."""
        if not self._heap:
            raise RuntimeError("event queue is empty")
        at, _, kind, payload = heapq.heappop(self._heap)
        self.now = at
        self.events_processed += 1
        if self.events_processed > self.config.max_events:
            raise WatchdogError(
                f"exceeded max_events={self.config.max_events} at t={self.now}us"
            )
        self._last_record: Optional[TraceRecord] = None
        if kind == DELIVER:
            self._on_deliver(payload)
        elif kind == TIMEOUT:
            self._on_timeout(payload)
        elif kind == HEARTBEAT:
            self._on_heartbeat(*payload)
        elif kind == TASK_ARRIVAL:
            self._on_task_arrival(*payload)
        elif kind == CRASH:
            self._on_crash(payload)
        elif kind == RECOVER:
            self._on_recover(payload)
        elif kind == PARTITION:
            self.blocked = set(payload)
        return self._last_record

    def _snapshot(self, idx: int):
        node = self.nodes[idx]
        return (node.role, node.current_term, node.commit_index, node.election_deadline)

    def _after_op(self, idx: int, before, msgs: list[Message]) -> None:
        node = self.nodes[idx]
        old_role, old_term, old_commit, old_deadline = before
        if node.election_deadline != old_deadline and node.role is not Role.LEADER:
            self._schedule(node.election_deadline, TIMEOUT, idx)
        if node.role is Role.LEADER and old_role is not Role.LEADER:
            self.leaders_elected += 1
            self.tracker.on_leader(node)
            self._hb_epoch[idx] += 1
            self._schedule(self.now + self.heartbeat_us, HEARTBEAT, (idx, self._hb_epoch[idx]))
        if node.commit_index > old_commit:
            self._record_commits(idx, old_commit, node.commit_index)
        if (node.role, node.current_term, node.commit_index) != (old_role, old_term, old_commit):
            record = TraceRecord(
                self.now, idx, old_role, node.role, node.current_term, node.commit_index
            )
            self._last_record = record
            if self.trace is not None:
                self.trace(record)
        self._route(msgs)

    def _on_deliver(self, msg: Message) -> None:
        dst = msg.dst
        if not self.alive[dst] or (
            msg.src >= 0 and frozenset((msg.src, dst)) in self.blocked
        ):
            self.drops += 1
            return
        if isinstance(msg, ClientTask):
            self._on_client_task(dst, msg)
            return
        before = self._snapshot(dst)
        _, out = handle_message(self.nodes[dst], msg, self.now, self.rng)
        self.messages_delivered += 1
        self._after_op(dst, before, out)

    def _on_timeout(self, idx: int) -> None:
        node = self.nodes[idx]
        if not self.alive[idx] or node.role is Role.LEADER:
            return
        if self.now < node.election_deadline:
            return  # stale timer; the deadline moved
        before = self._snapshot(idx)
        self.elections_started += 1
        _, out = on_election_timeout(node, self.now, self.rng)
        self._after_op(idx, before, out)

    def _on_heartbeat(self, idx: int, epoch: int) -> None:
        node = self.nodes[idx]
        if not self.alive[idx] or node.role is not Role.LEADER or self._hb_epoch[idx] != epoch:
            return  # this heartbeat chain is dead
        self._route(leader_broadcast(node))
        self._schedule(self.now + self.heartbeat_us, HEARTBEAT, (idx, epoch))

    def _on_task_arrival(self, payload: BlockPayload, fresh: bool) -> None:
        if fresh and self.config.task_rate > 0:
            self._schedule(self._next_arrival_gap(), TASK_ARRIVAL, (self._new_payload(), True))
        leader = self.find_leader()
        if leader is None:
            self._schedule(self.now + self.retry_us, TASK_ARRIVAL, (payload, False))
            return
        delay_s = migration_latency(self.resources[leader].queue_len, self.config.params)
        at = self.now + max(0, int(round(delay_s * 1e6)))
        self._schedule(at, DELIVER, ClientTask(src=-1, dst=leader, payload=payload))

    def _on_client_task(self, dst: int, msg: ClientTask) -> None:
        before = self._snapshot(dst)
        node = self.nodes[dst]
        _, out, result = handle_client_task(node, msg)
        if result.appended:
            entry = node.log[result.entry_index - 1]
            self.resources[dst].queue.append(msg.payload.task_id)
            tml = migration_latency(self.resources[dst].queue_len, self.config.params)
            self._block_meta[(entry.term, entry.index)] = _BlockMeta(
                msg.payload.task_id, tml, dst
            )
            self._refresh_shadowing(dst)
            self._after_op(dst, before, out)
            return
        hops = self._task_hops.get(msg.payload.task_id, 0) + 1
        self._task_hops[msg.payload.task_id] = hops
        hint = result.leader_hint
        if hint is not None and self.alive[hint] and hops <= 16:
            delay_s = migration_latency(self.resources[hint].queue_len, self.config.params)
            at = self.now + max(1, int(round(delay_s * 1e6)))
            self._schedule(at, DELIVER, ClientTask(src=-1, dst=hint, payload=msg.payload))
        else:
            self._task_hops[msg.payload.task_id] = 0
            self._schedule(self.now + self.retry_us, TASK_ARRIVAL, (msg.payload, False))

    def _record_commits(self, idx: int, old_commit: int, new_commit: int) -> None:
        node = self.nodes[idx]
        self.tracker.on_commit(node, old_commit, new_commit)
        for index in range(old_commit + 1, min(new_commit, node.last_log_index) + 1):
            entry = node.log[index - 1]
            key = (entry.term, entry.index)
            meta = self._block_meta.get(key)
            if meta is None or key in self._recorded:
                continue
            self._recorded.add(key)
            owner = meta.leader
            rate_pairs = []
            for f in self.nodes[owner].peers:
                shadow = self.shadowing.get(frozenset((owner, f)), 1.0)
                down = link_rate(owner, f, self.config.geometry, self.config.params, shadow)
                up = link_rate(f, owner, self.config.geometry, self.config.params, shadow)
                rate_pairs.append((down, up))
            breakdown = LatencyBreakdown(
                tml=meta.tml,
                clbg=block_generation_latency(
                    entry.block.tx_count, self.resources[owner], self.config.params
                ),
                rcb=consensus_latency(
                    owner, self.config.geometry, self.config.params, rate_pairs
                ),
            )
            self.breakdowns.append(breakdown)
            self.blocks_committed += 1
            try:
                self.resources[owner].queue.remove(meta.task_id)
            except ValueError:
                pass  # deposed leader already lost track of the task

    def _on_crash(self, idx: int) -> None:
        self.alive[idx] = False

    def _on_recover(self, idx: int) -> None:
        if self.alive[idx]:
            log.warning("recover of live node %d ignored", idx)
            return
        self.alive[idx] = True
        node = self.nodes[idx]
        node.role = Role.FOLLOWER
        node.votes_received = set()
        node.next_index = {}
        node.match_index = {}
        node.known_leader = None
        node.election_deadline = draw_deadline(node, self.now, self.rng)
        self._schedule(node.election_deadline, TIMEOUT, idx)

    # ------------------------------------------------------------------
    # public controls
    # ------------------------------------------------------------------

    def inject(self, at_us: int, directive: FaultDirective) -> None:
        """Enqueue a fault directive at ``at_us`` (>= current sim time)."""
        if at_us < self.now:
            raise ValueError("cannot inject a fault in the past")
        if isinstance(directive, CrashNode):
            self._schedule(at_us, CRASH, directive.node)
        elif isinstance(directive, RecoverNode):
            self._schedule(at_us, RECOVER, directive.node)
        elif isinstance(directive, Partition):
            self._schedule(at_us, PARTITION, directive.blocked)
        else:
            raise TypeError(f"unknown fault directive {directive!r}")

    def inject_task(self, payload: BlockPayload) -> None:
        """Hand one cloud task to the simulator right now."""
        self._schedule(self.now, TASK_ARRIVAL, (payload, False))

    def find_leader(self) -> Optional[int]:
        """The live leader with the highest term, if any."""
        best = None
        for i, node in enumerate(self.nodes):
            if self.alive[i] and node.role is Role.LEADER:
                if best is None or node.current_term > self.nodes[best].current_term:
                    best = i
        return best

    def force_stepdown(self) -> None:
        """Demote the current leader (if any) and re-arm its election timer."""
        leader = self.find_leader()
        if leader is None:
            return
        node = self.nodes[leader]
        node.role = Role.FOLLOWER
        node.votes_received = set()
        node.next_index = {}
        node.match_index = {}
        node.known_leader = None
        node.election_deadline = draw_deadline(node, self.now, self.rng)
        self._schedule(node.election_deadline, TIMEOUT, leader)

    def rearm_node(self, idx: int, lo_us: float, hi_us: float) -> None:
        """Set a node's timeout window and restart its election timer."""
        node = self.nodes[idx]
        node.timeout_lo_us = lo_us
        node.timeout_hi_us = hi_us
        if not self.alive[idx] or node.role is Role.LEADER:
            return
        node.election_deadline = draw_deadline(node, self.now, self.rng)
        self._schedule(node.election_deadline, TIMEOUT, idx)

    def run_until(
        self,
        t_us: Optional[int] = None,
        predicate: Optional[Callable[["ClusterSim"], bool]] = None,
        max_events: Optional[int] = None,
    ) -> SimSummary:
        """Step until ``t_us`` is reached, ``predicate(sim)`` holds, or the
        queue drains.  ``max_events`` bounds this call only; the sim-wide
        budget from the config still applies."""
        if t_us is None and predicate is None:
            raise ValueError("run_until needs a time bound or a predicate")
        local_events = 0
        while self._heap:
            if predicate is not None and predicate(self):
                break
            if t_us is not None and self._heap[0][0] > t_us:
                self.now = max(self.now, t_us)
                break
            if max_events is not None and local_events >= max_events:
                break
            self.step()
            local_events += 1
        return self.summary()

    def summary(self) -> SimSummary:
        total = LatencyBreakdown()
        for b in self.breakdowns:
            total = total + b
        return SimSummary(
            now_us=self.now,
            elections_started=self.elections_started,
            leaders_elected=self.leaders_elected,
            max_term=max(n.current_term for n in self.nodes),
            blocks_committed=self.blocks_committed,
            messages_delivered=self.messages_delivered,
            drops=self.drops,
            total_latency=total,
            breakdowns=list(self.breakdowns),
            violations=list(self.tracker.violations),
        )

    def all_violations(self) -> list[str]:
        """Running violations plus a final whole-log matching sweep."""
        return self.tracker.violations + check_log_matching(self.nodes)


def new_sim(config: SimConfig, seed: int, trace: Optional[Callable] = None) -> ClusterSim:
    """Build a fresh simulation; all nodes start as followers at term 0."""
    return ClusterSim(config, seed, trace)
