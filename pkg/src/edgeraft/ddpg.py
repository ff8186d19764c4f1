"""Deep deterministic policy gradient with critic-guided action refinement.

The actor maps a state to a preference vector in [-1, 1]^N; the critic
scores (state, action) pairs.  Each epoch the agent samples an exploratory
action, refines it by maximizing the critic over an L2 ball around the
proposal, executes it, and stores the transition in a bounded FIFO deque.
After a warmup it trains on uniformly sampled mini-batches: one critic
regression step toward ``r + discount * Q'(s', pi'(s'))``, one policy
gradient ascent step through the critic, and one soft target update.

All optimization is plain SGD at fixed learning rates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .nets import Mlp

_CHECKPOINT_MAGIC = b"EDGERAFT"
_CHECKPOINT_VERSION = 1


@dataclass
class AgentConfig:
    alpha_critic: float = 1e-3
    alpha_actor: float = 1e-4
    discount: float = 0.99
    soft_kappa: float = 0.995
    noise_sigma: float = 0.1
    warmup_epochs: int = 64
    max_epochs: int = 50_000
    batch_size: int = 64
    refine_radius: float = 0.2
    refine_candidates: int = 16
    capacity: int = 100_000
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        errors = []
        if not 0 < self.alpha_critic < 1:
            errors.append("alpha_critic: must be in (0, 1)")
        if not 0 < self.alpha_actor < 1:
            errors.append("alpha_actor: must be in (0, 1)")
        if not 0 <= self.discount < 1:
            errors.append("discount: must be in [0, 1)")
        if not 0 < self.soft_kappa <= 1:
            errors.append("soft_kappa: must be in (0, 1]")
        if self.noise_sigma < 0:
            errors.append("noise_sigma: must be >= 0")
        if self.refine_radius < 0:
            errors.append("refine_radius: must be >= 0")
        for name in ("warmup_epochs", "max_epochs", "batch_size", "refine_candidates", "capacity"):
            if getattr(self, name) < 1:
                errors.append(f"{name}: must be >= 1")
        if errors:
            raise ValueError("; ".join(errors))


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray


class ReplayDeque:
    """Bounded FIFO of transitions; eviction is strictly oldest-first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._start = 0

    def append(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._start] = item
            self._start = (self._start + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Transition:
        if not 0 <= i < len(self._items):
            raise IndexError(i)
        return self._items[(self._start + i) % self.capacity]

    def sample(self, rng: np.random.Generator, k: int):
        """Uniform sample with replacement, stacked into batch arrays."""
        if not self._items:
            raise ValueError("cannot sample from an empty deque")
        idx = rng.integers(0, len(self._items), size=k)
        picks = [self[int(i)] for i in idx]
        s = np.stack([p.s for p in picks])
        a = np.stack([p.a for p in picks])
        r = np.array([p.r for p in picks])
        s_next = np.stack([p.s_next for p in picks])
        return s, a, r, s_next


@dataclass
class AgentNets:
    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp

    @classmethod
    def create(
        cls, state_dim: int, action_dim: int, hidden, rng: np.random.Generator
    ) -> "AgentNets":
        """Gaussian-initialized online nets; targets start as exact copies."""
        actor = Mlp([state_dim, *hidden, action_dim], "tanh", rng)
        critic = Mlp([state_dim + action_dim, *hidden, 1], "identity", rng)
        return cls(actor, critic, actor.copy(), critic.copy())


def act(nets: AgentNets, state, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Policy output plus i.i.d. Gaussian exploration noise, box-clipped."""
    a = nets.actor.forward(state)
    a = a + rng.normal(size=a.shape) * sigma
    return np.clip(a, -1.0, 1.0)


def refine_action(
    nets: AgentNets,
    state,
    a_base,
    radius: float,
    candidates: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Critic-argmax over ``candidates`` uniform samples from the L2 ball of
    ``radius`` around ``a_base``, plus ``a_base`` itself, so the result never
    scores below the proposal.  Ties go to the earliest candidate."""
    base = np.asarray(a_base, dtype=float)
    n = base.size
    pool = [base]
    for _ in range(candidates):
        direction = rng.normal(size=n)
        norm = np.linalg.norm(direction)
        if norm > 0:
            direction /= norm
        offset = direction * radius * rng.random() ** (1.0 / n)
        pool.append(np.clip(base + offset, -1.0, 1.0))
    batch = np.stack(pool)
    states = np.tile(np.asarray(state, dtype=float), (len(pool), 1))
    q = nets.critic.forward(np.hstack([states, batch])).ravel()
    return batch[int(np.argmax(q))].copy()


def critic_update(nets: AgentNets, batch, alpha: float, discount: float) -> float:
    """One SGD step on the mean-squared Bellman error; returns the pre-step loss."""
    s, a, r, s_next = batch
    a_next = nets.target_actor.forward(s_next)
    q_next = nets.target_critic.forward(np.hstack([s_next, a_next])).ravel()
    y = r + discount * q_next
    q = nets.critic.forward(np.hstack([s, a])).ravel()
    diff = q - y
    loss = float(np.mean(diff**2))
    if not np.isfinite(loss):
        raise FloatingPointError(f"critic loss is not finite: {loss}")
    grad_out = (2.0 * diff / diff.size)[:, None]
    grads, _ = nets.critic.backward(grad_out)
    nets.critic.apply_gradients(grads, -alpha)
    return loss


def actor_update(nets: AgentNets, batch, alpha: float) -> float:
    """One gradient-ascent step on mean Q(s, pi(s)); returns the pre-step mean Q."""
    s = batch[0]
    a = nets.actor.forward(s)
    q = nets.critic.forward(np.hstack([s, a])).ravel()
    mean_q = float(np.mean(q))
    if not np.isfinite(mean_q):
        raise FloatingPointError(f"actor objective is not finite: {mean_q}")
    grad_q = np.full((q.size, 1), 1.0 / q.size)
    _, grad_in = nets.critic.backward(grad_q)
    grad_action = grad_in[:, s.shape[1]:]
    grads, _ = nets.actor.backward(grad_action)
    nets.actor.apply_gradients(grads, +alpha)
    return mean_q


def soft_update(nets: AgentNets, kappa: float) -> None:
    """target <- kappa * target + (1 - kappa) * online, elementwise."""
    nets.target_actor.blend_from(nets.actor, kappa)
    nets.target_critic.blend_from(nets.critic, kappa)


@dataclass
class EpochLog:
    epoch: int
    episode: int
    reward: float
    critic_loss: Optional[float]
    mean_q: Optional[float]
    leader: Optional[int]
    stalled: bool
    elections: int
    tml: float
    clbg: float
    rcb: float


def _episode_seed(seed: int, episode: int) -> int:
    return seed * 1_000_003 + episode


def train(
    env, config: AgentConfig, seed: int, replay: Optional[ReplayDeque] = None
) -> tuple[AgentNets, list[EpochLog]]:
    """Run the training loop against an environment exposing
    ``reset(seed) -> state`` and ``step(action) -> (state, reward, done)``.

    Epochs count up to ``config.max_epochs`` across episode boundaries;
    updates begin strictly after ``config.warmup_epochs`` epochs.  Passing
    ``replay`` lets callers observe the experience deque.
    """
    rng = np.random.default_rng(seed)
    nets = AgentNets.create(env.state_dim, env.action_dim, config.hidden, rng)
    deque = replay if replay is not None else ReplayDeque(config.capacity)
    logs: list[EpochLog] = []
    episode = 0
    state = env.reset(_episode_seed(seed, episode))
    for epoch in range(config.max_epochs):
        a = act(nets, state, config.noise_sigma, rng)
        a_star = refine_action(
            nets, state, a, config.refine_radius, config.refine_candidates, rng
        )
        state_next, reward, done = env.step(a_star)
        deque.append(Transition(state.copy(), a_star.copy(), float(reward), state_next.copy()))
        loss = mean_q = None
        if epoch + 1 > config.warmup_epochs:
            batch = deque.sample(rng, config.batch_size)
            loss = critic_update(nets, batch, config.alpha_critic, config.discount)
            mean_q = actor_update(nets, batch, config.alpha_actor)
            soft_update(nets, config.soft_kappa)
        info = getattr(env, "last_info", None)
        breakdown = info.breakdown if info is not None else None
        logs.append(
            EpochLog(
                epoch=epoch,
                episode=episode,
                reward=float(reward),
                critic_loss=loss,
                mean_q=mean_q,
                leader=info.leader if info is not None else None,
                stalled=info.stalled if info is not None else False,
                elections=info.elections if info is not None else 0,
                tml=breakdown.tml if breakdown is not None else 0.0,
                clbg=breakdown.clbg if breakdown is not None else 0.0,
                rcb=breakdown.rcb if breakdown is not None else 0.0,
            )
        )
        state = state_next
        if done:
            episode += 1
            state = env.reset(_episode_seed(seed, episode))
    return nets, logs


# ---------------------------------------------------------------------------
# Checkpoint I/O: versioned little-endian binary dump of all four nets
# ---------------------------------------------------------------------------

def _write_net(out, net: Mlp) -> None:
    out.write(struct.pack("<B", 1 if net.output_activation == "tanh" else 0))
    out.write(struct.pack("<I", len(net.sizes)))
    out.write(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
    for w, b in zip(net.weights, net.biases):
        out.write(w.astype("<f8").tobytes(order="C"))
        out.write(b.astype("<f8").tobytes(order="C"))


def _read_net(buf, offset: int) -> tuple[Mlp, int]:
    (act_flag,) = struct.unpack_from("<B", buf, offset)
    offset += 1
    (n_sizes,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    sizes = list(struct.unpack_from(f"<{n_sizes}I", buf, offset))
    offset += 4 * n_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(buf, dtype="<f8", count=fan_in * fan_out, offset=offset)
        weights.append(w.reshape(fan_in, fan_out))
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(buf, dtype="<f8", count=fan_out, offset=offset)
        biases.append(b)
        offset += 8 * fan_out
    net = Mlp.from_params(sizes, "tanh" if act_flag else "identity", weights, biases)
    return net, offset


def save_nets(nets: AgentNets, path) -> None:
    with open(path, "wb") as out:
        out.write(_CHECKPOINT_MAGIC)
        out.write(struct.pack("<I", _CHECKPOINT_VERSION))
        out.write(struct.pack("<I", 4))
        for net in (nets.actor, nets.critic, nets.target_actor, nets.target_critic):
            _write_net(out, net)


def load_nets(path) -> AgentNets:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _CHECKPOINT_MAGIC:
        raise ValueError("not an edgeraft checkpoint")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", buf, 12)
    if count != 4:
        raise ValueError(f"expected 4 nets, found {count}")
    offset = 16
    loaded = []
    for _ in range(4):
        net, offset = _read_net(buf, offset)
        loaded.append(net)
    return AgentNets(*loaded)
