"""Raft consensus state machine for a fixed-membership cluster.

Every operation here maps ``(node state, event) -> (node state, messages)``
with no knowledge of wall clocks, sockets, or threads.  Simulated time and
randomized timeout draws are supplied by the caller, so a run is fully
determined by its event sequence and PRNG seed.

Log indices are 1-based and contiguous (no snapshots); index 0 denotes the
empty prefix.  A node grants at most one vote per term, steps down whenever
it sees a higher term, and a leader only advances its commit index over
entries from its own term (dropping that restriction is known to lose
committed entries across leader changes).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Union


class Role(Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


@dataclass(frozen=True)
class BlockPayload:
    """Ledger payload of one log entry: a batch of recorded task executions."""

    task_id: str
    tx_count: int
    tx_batch_bytes: int = 0


@dataclass(frozen=True)
class LogEntry:
    term: int
    index: int
    block: BlockPayload


# ---------------------------------------------------------------------------
# Wire messages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RequestVotes:
    src: int
    dst: int
    term: int
    candidate_id: int
    last_log_index: int
    last_log_term: int


@dataclass(frozen=True)
class RequestVotesReply:
    src: int
    dst: int
    term: int
    vote_granted: bool


@dataclass(frozen=True)
class AppendEntries:
    src: int
    dst: int
    term: int
    leader_id: int
    prev_log_index: int
    prev_log_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int


@dataclass(frozen=True)
class AppendEntriesReply:
    src: int
    dst: int
    term: int
    success: bool
    match_hint: int


@dataclass(frozen=True)
class ClientTask:
    src: int
    dst: int
    payload: BlockPayload


Message = Union[RequestVotes, RequestVotesReply, AppendEntries, AppendEntriesReply, ClientTask]


class ClientTaskResult(NamedTuple):
    """Outcome of a client task delivery: appended locally or a redirect."""

    appended: bool
    entry_index: int
    leader_hint: Optional[int]


@dataclass
class RaftNodeState:
    """Complete Raft state of one node.

    ``timeout_lo_us`` / ``timeout_hi_us`` bound the randomized election
    timeout; the environment layer narrows a node's window to bias
    elections toward it without touching any protocol rule.

    ``unsafe_relaxed_commit`` is test-only: it drops the current-term
    restriction on commit advancement so the safety checker can be shown
    to catch the resulting violations.
    """

    id: int
    peers: tuple[int, ...]
    role: Role = Role.FOLLOWER
    current_term: int = 0
    voted_for: Optional[int] = None
    log: list[LogEntry] = field(default_factory=list)
    commit_index: int = 0
    last_applied: int = 0
    next_index: dict[int, int] = field(default_factory=dict)
    match_index: dict[int, int] = field(default_factory=dict)
    election_deadline: int = 0
    votes_received: set[int] = field(default_factory=set)
    known_leader: Optional[int] = None
    timeout_lo_us: float = 150_000.0
    timeout_hi_us: float = 300_000.0
    unsafe_relaxed_commit: bool = False

    @property
    def cluster_size(self) -> int:
        return len(self.peers) + 1

    @property
    def majority(self) -> int:
        return self.cluster_size // 2 + 1

    @property
    def last_log_index(self) -> int:
        return len(self.log)

    @property
    def last_log_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def entry_term(self, index: int) -> int:
        """Term of the entry at 1-based ``index``; 0 for the empty prefix."""
        if index == 0:
            return 0
        return self.log[index - 1].term


def draw_deadline(state: RaftNodeState, now: int, rng: random.Random) -> int:
    """Next election deadline: now plus a uniform draw from the node's window."""
    span = rng.uniform(state.timeout_lo_us, state.timeout_hi_us)
    return now + max(1, int(round(span)))


def _step_down(state: RaftNodeState, term: int, now: int, rng: random.Random) -> None:
    state.role = Role.FOLLOWER
    if term > state.current_term:
        # a vote already cast in the current term must survive a same-term
        # step-down, or a node could vote twice in one term
        state.current_term = term
        state.voted_for = None
    state.votes_received = set()
    state.next_index = {}
    state.match_index = {}
    state.election_deadline = draw_deadline(state, now, rng)


def _log_up_to_date(state: RaftNodeState, last_index: int, last_term: int) -> bool:
    """Candidate log freshness check: last term first, then last index."""
    if last_term != state.last_log_term:
        return last_term > state.last_log_term
    return last_index >= state.last_log_index


def _append_entries_for(state: RaftNodeState, peer: int) -> AppendEntries:
    ni = state.next_index.get(peer, state.last_log_index + 1)
    prev = ni - 1
    return AppendEntries(
        src=state.id,
        dst=peer,
        term=state.current_term,
        leader_id=state.id,
        prev_log_index=prev,
        prev_log_term=state.entry_term(prev),
        entries=tuple(state.log[ni - 1:]),
        leader_commit=state.commit_index,
    )


def leader_broadcast(state: RaftNodeState) -> list[Message]:
    """One AppendEntries per peer, carrying whatever that peer still lacks.

    With all peers caught up the messages are empty heartbeats.
    """
    if state.role is not Role.LEADER:
        return []
    return [_append_entries_for(state, peer) for peer in state.peers]


def _become_leader(state: RaftNodeState) -> list[Message]:
    state.role = Role.LEADER
    state.known_leader = state.id
    state.next_index = {p: state.last_log_index + 1 for p in state.peers}
    state.match_index = {p: 0 for p in state.peers}
    _advance_commit(state)
    return leader_broadcast(state)


def _advance_commit(state: RaftNodeState) -> None:
    """Move the leader's commit index to the highest majority-replicated entry.

    Only entries from the current term may advance the commit index unless
    the test-only relaxed flag is set.
    """
    for index in range(state.last_log_index, state.commit_index, -1):
        if not state.unsafe_relaxed_commit and state.entry_term(index) != state.current_term:
            continue
        replicated = 1 + sum(1 for p in state.peers if state.match_index.get(p, 0) >= index)
        if replicated >= state.majority:
            state.commit_index = index
            state.last_applied = index
            break


# ---------------------------------------------------------------------------
# Event handlers
# ---------------------------------------------------------------------------

def on_election_timeout(
    state: RaftNodeState, now: int, rng: random.Random
) -> tuple[RaftNodeState, list[Message]]:
    """Start a new candidacy: bump the term, vote for self, solicit votes.

    Leaders never self-timeout; they keep authority through heartbeats.
    """
    if state.role is Role.LEADER:
        return state, []
    state.role = Role.CANDIDATE
    state.current_term += 1
    state.voted_for = state.id
    state.votes_received = {state.id}
    state.known_leader = None
    state.election_deadline = draw_deadline(state, now, rng)
    if len(state.votes_received) >= state.majority:
        # single-node cluster: the self-vote already is a majority
        return state, _become_leader(state)
    msgs: list[Message] = [
        RequestVotes(
            src=state.id,
            dst=peer,
            term=state.current_term,
            candidate_id=state.id,
            last_log_index=state.last_log_index,
            last_log_term=state.last_log_term,
        )
        for peer in state.peers
    ]
    return state, msgs


def handle_request_votes(
    state: RaftNodeState, msg: RequestVotes, now: int, rng: random.Random
) -> tuple[RaftNodeState, list[Message]]:
    if msg.term > state.current_term:
        _step_down(state, msg.term, now, rng)
    granted = False
    if msg.term == state.current_term:
        free_or_same = state.voted_for is None or state.voted_for == msg.candidate_id
        if free_or_same and _log_up_to_date(state, msg.last_log_index, msg.last_log_term):
            granted = True
            state.voted_for = msg.candidate_id
            # defer own candidacy to the candidate we just endorsed
            state.election_deadline = draw_deadline(state, now, rng)
    reply = RequestVotesReply(
        src=state.id, dst=msg.src, term=state.current_term, vote_granted=granted
    )
    return state, [reply]


def handle_request_votes_reply(
    state: RaftNodeState, msg: RequestVotesReply, now: int, rng: random.Random
) -> tuple[RaftNodeState, list[Message]]:
    if msg.term > state.current_term:
        _step_down(state, msg.term, now, rng)
        return state, []
    if state.role is not Role.CANDIDATE or msg.term < state.current_term:
        return state, []
    if msg.vote_granted:
        state.votes_received.add(msg.src)
        if len(state.votes_received) >= state.majority:
            return state, _become_leader(state)
    return state, []


def handle_append_entries(
    state: RaftNodeState, msg: AppendEntries, now: int, rng: random.Random
) -> tuple[RaftNodeState, list[Message]]:
    if msg.term < state.current_term:
        reply = AppendEntriesReply(
            src=state.id, dst=msg.src, term=state.current_term, success=False, match_hint=0
        )
        return state, [reply]
    if msg.term > state.current_term or state.role is Role.CANDIDATE:
        _step_down(state, msg.term, now, rng)
    if state.role is Role.LEADER:
        # same-term second leader cannot exist; refuse rather than obey
        reply = AppendEntriesReply(
            src=state.id, dst=msg.src, term=state.current_term, success=False, match_hint=0
        )
        return state, [reply]
    state.known_leader = msg.leader_id
    state.election_deadline = draw_deadline(state, now, rng)

    ok = msg.prev_log_index <= state.last_log_index and (
        state.entry_term(msg.prev_log_index) == msg.prev_log_term
    )
    if not ok:
        reply = AppendEntriesReply(
            src=state.id, dst=msg.src, term=state.current_term, success=False, match_hint=0
        )
        return state, [reply]

    for entry in msg.entries:
        if entry.index <= state.last_log_index:
            if state.log[entry.index - 1].term != entry.term:
                # conflicting suffix: drop everything from here on
                del state.log[entry.index - 1:]
                state.log.append(entry)
        else:
            state.log.append(entry)
    last_new = msg.prev_log_index + len(msg.entries)
    if msg.leader_commit > state.commit_index:
        state.commit_index = max(state.commit_index, min(msg.leader_commit, last_new))
        state.last_applied = state.commit_index
    reply = AppendEntriesReply(
        src=state.id, dst=msg.src, term=state.current_term, success=True, match_hint=last_new
    )
    return state, [reply]


def handle_append_entries_reply(
    state: RaftNodeState, msg: AppendEntriesReply, now: int, rng: random.Random
) -> tuple[RaftNodeState, list[Message]]:
    if msg.term > state.current_term:
        _step_down(state, msg.term, now, rng)
        return state, []
    if state.role is not Role.LEADER or msg.term < state.current_term:
        return state, []
    peer = msg.src
    if msg.success:
        if msg.match_hint > state.match_index.get(peer, 0):
            state.match_index[peer] = msg.match_hint
            state.next_index[peer] = msg.match_hint + 1
            _advance_commit(state)
        if state.next_index.get(peer, 1) <= state.last_log_index:
            return state, [_append_entries_for(state, peer)]
        return state, []
    state.next_index[peer] = max(1, state.next_index.get(peer, 2) - 1)
    return state, [_append_entries_for(state, peer)]


def handle_client_task(
    state: RaftNodeState, msg: ClientTask
) -> tuple[RaftNodeState, list[Message], ClientTaskResult]:
    """Append the task as a new log entry if leader, else report a redirect."""
    if state.role is not Role.LEADER:
        hint = state.known_leader if state.known_leader != state.id else None
        return state, [], ClientTaskResult(False, 0, hint)
    entry = LogEntry(term=state.current_term, index=state.last_log_index + 1, block=msg.payload)
    state.log.append(entry)
    _advance_commit(state)  # a single-node cluster commits on append
    return state, leader_broadcast(state), ClientTaskResult(True, entry.index, state.id)


def handle_message(
    state: RaftNodeState, msg: Message, now: int, rng: random.Random
) -> tuple[RaftNodeState, list[Message]]:
    """Route one wire message to its handler (client tasks excluded)."""
    if isinstance(msg, RequestVotes):
        return handle_request_votes(state, msg, now, rng)
    if isinstance(msg, RequestVotesReply):
        return handle_request_votes_reply(state, msg, now, rng)
    if isinstance(msg, AppendEntries):
        return handle_append_entries(state, msg, now, rng)
    if isinstance(msg, AppendEntriesReply):
        return handle_append_entries_reply(state, msg, now, rng)
    raise TypeError(f"unroutable message {type(msg).__name__}")


def make_node(
    node_id: int,
    cluster_size: int,
    now: int,
    rng: random.Random,
    timeout_lo_us: float = 150_000.0,
    timeout_hi_us: float = 300_000.0,
) -> RaftNodeState:
    """Fresh follower at term 0 with a randomized first election deadline."""
    if not 0 <= node_id < cluster_size:
        raise ValueError("node_id must lie in [0, cluster_size)")
    peers = tuple(p for p in range(cluster_size) if p != node_id)
    state = RaftNodeState(
        id=node_id, peers=peers, timeout_lo_us=timeout_lo_us, timeout_hi_us=timeout_hi_us
    )
    state.election_deadline = draw_deadline(state, now, rng)
    return state
