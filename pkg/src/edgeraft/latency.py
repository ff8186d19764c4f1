"""Analytic latency model for a Raft-coordinated edge cluster.

Three latency components make up one block-commit round:

* migration latency  -- moving the queued transactions from the cloud to the
  leader over a fiber link: ``queue_len * K / beta``.
* block-generation latency -- hashing cost of assembling a block of n
  transactions on the leader: ``(n + 2**n - 1) * nu / iota``.
* round-consensus latency -- pushing the block to the quorum-completing
  follower and getting its confirmation back, using Shannon-form wireless
  link rates.

Everything here is a pure function of explicit parameters; shadowing draws
are produced by the caller so the same inputs always give the same outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class LatencyError(ValueError):
    """A latency computation was invoked outside its domain."""


@dataclass(frozen=True)
class LatencyParams:
    """Physical constants of the cluster.

    Attributes:
        K: transaction size in bytes.
        beta: fiber transmission rate cloud<->leader, bytes/s.
        nu: average CPU cycles per hash operation.
        H: size of a block-replication (AppendEntries) message, bits.
        U: size of a confirmation message, bits.
        B: total channel bandwidth, Hz.
        W: total transmit power, W.
        M0: white-noise power spectral density, W/Hz.
        varrho: path-loss exponent (unitless).
        upsilon_sigma: std-dev of the log-normal shadowing term in the log
            domain; 0 disables shadowing (multiplier fixed at 1).
        max_block_txs: cap on transactions per block, keeping the 2**n
            term in exact floating-point range.
        alternative_hash_count: use a Merkle-style max(0, 2n - 1) hash
            count instead of n + 2**n - 1 (sensitivity runs only).
    """

    K: float = 500.0
    beta: float = 1e6
    nu: float = 100.0
    H: float = 1e4
    U: float = 1e4
    B: float = 1e6
    W: float = 1.0
    M0: float = 1e-9
    varrho: float = 2.0
    upsilon_sigma: float = 0.0
    max_block_txs: int = 24
    alternative_hash_count: bool = False

    def __post_init__(self) -> None:
        positive = ("K", "beta", "nu", "H", "U", "B", "W", "M0", "varrho")
        bad = [name for name in positive if getattr(self, name) <= 0]
        if self.upsilon_sigma < 0:
            bad.append("upsilon_sigma")
        if self.max_block_txs < 0 or self.max_block_txs > 64:
            bad.append("max_block_txs")
        if bad:
            raise LatencyError(f"invalid latency parameters: {', '.join(bad)}")


@dataclass
class NodeResources:
    """Compute capacity and pending work of one edge node.

    ``backlog`` is a standing count of tasks the node already holds;
    ``queue`` tracks tasks enqueued dynamically during a run.  The queue
    length used by the migration formula is the sum of both.
    """

    iota: float
    backlog: int = 0
    queue: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.iota <= 0:
            raise LatencyError("iota must be > 0")
        if self.backlog < 0:
            raise LatencyError("backlog must be >= 0")

    @property
    def queue_len(self) -> int:
        return self.backlog + len(self.queue)


class ClusterGeometry:
    """Symmetric pairwise-distance matrix of the cluster, meters."""

    def __init__(self, distances) -> None:
        d = np.asarray(distances, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 1:
            raise LatencyError("distance matrix must be square and non-empty")
        if not np.allclose(d, d.T):
            raise LatencyError("distance matrix must be symmetric")
        if np.any(np.diag(d) != 0.0):
            raise LatencyError("self-distances must be zero")
        off = d[~np.eye(d.shape[0], dtype=bool)]
        if off.size and np.any(off <= 0.0):
            raise LatencyError("inter-node distances must be > 0")
        self.d = d

    @property
    def size(self) -> int:
        return self.d.shape[0]

    @property
    def follower_count(self) -> int:
        return self.size - 1

    def distance(self, i: int, j: int) -> float:
        return float(self.d[i, j])


@dataclass(frozen=True)
class LatencyBreakdown:
    """Per-round latency split into its three components, seconds."""

    tml: float = 0.0
    clbg: float = 0.0
    rcb: float = 0.0

    @property
    def total(self) -> float:
        return self.tml + self.clbg + self.rcb

    def __add__(self, other: "LatencyBreakdown") -> "LatencyBreakdown":
        return LatencyBreakdown(
            self.tml + other.tml, self.clbg + other.clbg, self.rcb + other.rcb
        )


# ---------------------------------------------------------------------------
# Latency formulas
# ---------------------------------------------------------------------------

def migration_latency(queue_len: int, params: LatencyParams) -> float:
    """Cloud-to-leader migration latency for ``queue_len`` pending tasks."""
    if queue_len < 0:
        raise LatencyError("queue_len must be >= 0")
    return queue_len * params.K / params.beta


def block_generation_latency(
    tx_count: int, node: NodeResources, params: LatencyParams
) -> float:
    """Expected compute latency of generating a block of ``tx_count`` txs."""
    if tx_count < 0:
        raise LatencyError("tx_count must be >= 0")
    if tx_count > params.max_block_txs:
        raise LatencyError(
            f"tx_count {tx_count} exceeds max_block_txs {params.max_block_txs}"
        )
    if params.alternative_hash_count:
        hashes = max(0, 2 * tx_count - 1)
    else:
        hashes = tx_count + 2**tx_count - 1
    return hashes * params.nu / node.iota


def snr(
    leader: int,
    follower: int,
    geometry: ClusterGeometry,
    params: LatencyParams,
    shadowing: float = 1.0,
) -> float:
    """Signal-to-noise ratio of the leader->follower wireless link."""
    if leader == follower:
        raise LatencyError("snr is undefined for a node talking to itself")
    if shadowing <= 0:
        raise LatencyError("shadowing multiplier must be > 0")
    d = geometry.distance(leader, follower)
    return params.W * d ** (-params.varrho) * shadowing / (params.B * params.M0)


def link_rate(
    leader: int,
    follower: int,
    geometry: ClusterGeometry,
    params: LatencyParams,
    shadowing: float = 1.0,
) -> float:
    """Shannon-form transmission rate of one leader-follower link, bits/s.

    The total bandwidth is split evenly across the leader's followers; the
    logarithm is base 2 so the rate is in bits per second.
    """
    f_count = geometry.follower_count
    if f_count < 1:
        raise LatencyError("link_rate needs at least one follower")
    rho = snr(leader, follower, geometry, params, shadowing)
    return (params.B / f_count) * math.log2(1.0 + rho)


def quorum_follower_index(follower_count: int) -> int:
    """Position of the quorum-completing follower in rate-sorted order."""
    if follower_count < 0:
        raise LatencyError("follower_count must be >= 0")
    return follower_count // 2


def consensus_latency(
    leader: int,
    geometry: ClusterGeometry,
    params: LatencyParams,
    rate_pairs: list[tuple[float, float]],
) -> float:
    """Round-consensus latency of one block, seconds.

    ``rate_pairs`` holds one ``(downlink, uplink)`` rate pair per follower,
    in any order.  Commit completes when a majority has confirmed, so the
    relevant follower is the one in the middle of the rate-sorted order:
    the block travels to it at its downlink rate and the confirmation
    returns at its uplink rate.  An empty pair list (single-node cluster)
    costs nothing.
    """
    if len(rate_pairs) != geometry.follower_count:
        raise LatencyError(
            f"expected {geometry.follower_count} rate pairs, got {len(rate_pairs)}"
        )
    if not rate_pairs:
        return 0.0
    for down, up in rate_pairs:
        if down <= 0 or up <= 0:
            raise LatencyError("link rates must be > 0")
    ordered = sorted(rate_pairs, key=lambda pair: (-pair[0], -pair[1]))
    down, up = ordered[quorum_follower_index(len(rate_pairs))]
    return params.H / down + params.U / up


def round_latency(
    leader: int,
    queue_len: int,
    tx_count: int,
    resources: list[NodeResources],
    geometry: ClusterGeometry,
    params: LatencyParams,
    shadowing: dict[frozenset, float] | None = None,
) -> LatencyBreakdown:
    """Full latency breakdown of one block round led by ``leader``.

    ``shadowing`` maps an unordered node pair to that round's shadowing
    draw; missing pairs (or None) default to 1, the noise-free channel.
    """
    rate_pairs = []
    for f in range(geometry.size):
        if f == leader:
            continue
        draw = 1.0
        if shadowing is not None:
            draw = shadowing.get(frozenset((leader, f)), 1.0)
        down = link_rate(leader, f, geometry, params, draw)
        up = link_rate(f, leader, geometry, params, draw)
        rate_pairs.append((down, up))
    return LatencyBreakdown(
        tml=migration_latency(queue_len, params),
        clbg=block_generation_latency(tx_count, resources[leader], params),
        rcb=consensus_latency(leader, geometry, params, rate_pairs),
    )
