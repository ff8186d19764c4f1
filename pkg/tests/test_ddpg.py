"""Agent-level tests: exploration, refinement, both update rules, soft
updates, the replay deque, the training loop, and checkpoint round-trips."""

import numpy as np
import pytest

from edgeraft.ddpg import (
    AgentConfig,
    AgentNets,
    ReplayDeque,
    Transition,
    act,
    actor_update,
    critic_update,
    load_nets,
    refine_action,
    save_nets,
    soft_update,
    train,
)
from edgeraft.nets import Mlp


def _nets(state_dim=4, action_dim=2, hidden=(8, 8), seed=0) -> AgentNets:
    return AgentNets.create(state_dim, action_dim, hidden, np.random.default_rng(seed))


class FakeEnv:
    """Deterministic quadratic-reward environment for loop-level tests."""

    def __init__(self, state_dim=4, action_dim=2, epochs_per_episode=5):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.epochs_per_episode = epochs_per_episode
        self.target = np.linspace(-0.5, 0.5, action_dim)
        self.last_info = None
        self._epoch = 0
        self._seed = 0

    def reset(self, seed):
        self._seed = seed
        self._epoch = 0
        return np.zeros(self.state_dim)

    def step(self, action):
        reward = -float(np.sum((np.asarray(action) - self.target) ** 2))
        self._epoch += 1
        state = np.full(self.state_dim, (self._seed % 7) / 7.0)
        return state, reward, self._epoch >= self.epochs_per_episode


# ---------------------------------------------------------------------------
# act
# ---------------------------------------------------------------------------

def test_act_with_zero_sigma_is_the_policy():
    nets = _nets()
    s = np.ones(4) * 0.3
    rng = np.random.default_rng(1)
    assert np.array_equal(act(nets, s, 0.0, rng), nets.actor.forward(s))


def test_act_noise_is_reproducible():
    nets = _nets()
    s = np.zeros(4)
    a1 = act(nets, s, 0.5, np.random.default_rng(7))
    a2 = act(nets, s, 0.5, np.random.default_rng(7))
    assert np.array_equal(a1, a2)


def test_act_stays_in_the_box():
    nets = _nets()
    rng = np.random.default_rng(2)
    for _ in range(200):
        a = act(nets, rng.normal(size=4), 2.0, rng)
        assert np.all(a >= -1.0) and np.all(a <= 1.0)


def test_act_noise_mean_is_statistically_zero():
    """Empirical mean of (act - policy) over 1e5 draws stays within 3 sigma."""
    nets = _nets(state_dim=2, action_dim=2, hidden=(3,))
    s = np.array([0.1, -0.1])
    base = nets.actor.forward(s)
    assert np.all(np.abs(base) < 0.6), "keep the policy away from the clip box"
    rng = np.random.default_rng(3)
    sigma = 0.05
    n = 100_000
    total = np.zeros(2)
    for _ in range(n):
        total += act(nets, s, sigma, rng) - base
    assert np.all(np.abs(total / n) < 3 * sigma / np.sqrt(n))


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def test_refine_zero_radius_returns_base():
    nets = _nets()
    base = np.array([0.2, -0.3])
    out = refine_action(nets, np.zeros(4), base, 0.0, 8, np.random.default_rng(4))
    assert np.allclose(out, base)


def test_refined_action_never_scores_below_base():
    nets = _nets()
    rng = np.random.default_rng(5)
    for _ in range(100):
        s = rng.normal(size=4)
        base = np.clip(rng.normal(size=2), -1, 1)
        refined = refine_action(nets, s, base, 0.3, 12, rng)
        q_ref = nets.critic.forward(np.concatenate([s, refined]))
        q_base = nets.critic.forward(np.concatenate([s, base]))
        assert q_ref >= q_base


def test_refine_matches_bruteforce_on_linear_critic():
    """With a linear critic the refinement equals a direct argmax over the
    identical candidate pool (regenerated with the same seed)."""
    state_dim, action_dim = 3, 2
    w = np.array([0.0, 0.0, 0.0, 2.0, -1.0])[:, None]
    critic = Mlp.from_params([5, 1], "identity", [w], [np.zeros(1)])
    nets = _nets(state_dim, action_dim)
    nets.critic = critic
    s = np.array([0.5, 0.5, 0.5])
    base = np.array([0.1, 0.1])
    radius, m = 0.4, 16

    refined = refine_action(nets, s, base, radius, m, np.random.default_rng(11))

    rng = np.random.default_rng(11)  # regenerate the same candidate pool
    pool = [base]
    for _ in range(m):
        direction = rng.normal(size=action_dim)
        norm = np.linalg.norm(direction)
        if norm > 0:
            direction /= norm
        offset = direction * radius * rng.random() ** (1.0 / action_dim)
        pool.append(np.clip(base + offset, -1.0, 1.0))
    scores = [2.0 * c[0] - 1.0 * c[1] for c in pool]
    assert np.allclose(refined, pool[int(np.argmax(scores))])


# ---------------------------------------------------------------------------
# critic update
# ---------------------------------------------------------------------------

def _batch_from(nets, rng, size=8, state_dim=4, action_dim=2):
    s = rng.normal(size=(size, state_dim))
    a = np.clip(rng.normal(size=(size, action_dim)), -1, 1)
    r = rng.normal(size=size)
    s2 = rng.normal(size=(size, state_dim))
    return s, a, r, s2


def test_perfect_critic_sees_zero_loss_and_keeps_params():
    nets = _nets()
    rng = np.random.default_rng(6)
    s, a, _, s2 = _batch_from(nets, rng)
    # with discount 0 the target is the raw reward; feed the critic's own
    # current predictions back as rewards so the regression error is zero
    r = nets.critic.forward(np.hstack([s, a])).ravel()
    before = nets.critic.params_flat()
    loss = critic_update(nets, (s, a, r, s2), alpha=1e-3, discount=0.0)
    assert loss == pytest.approx(0.0, abs=1e-24)
    assert np.array_equal(nets.critic.params_flat(), before)


def test_zero_discount_regresses_on_rewards():
    nets = _nets()
    rng = np.random.default_rng(7)
    s, a, r, s2 = _batch_from(nets, rng)
    q = nets.critic.forward(np.hstack([s, a])).ravel()
    expected = float(np.mean((q - r) ** 2))
    loss = critic_update(nets, (s, a, r, s2), alpha=1e-3, discount=0.0)
    assert loss == pytest.approx(expected, rel=1e-12)


def test_critic_step_descends_on_repeated_batch():
    nets = _nets(state_dim=1, action_dim=1, hidden=(4,))
    s = np.array([[0.5]])
    a = np.array([[0.2]])
    r = np.array([1.0])
    s2 = np.array([[0.0]])
    first = critic_update(nets, (s, a, r, s2), alpha=1e-3, discount=0.0)
    second = critic_update(nets, (s, a, r, s2), alpha=1e-3, discount=0.0)
    assert second < first


def test_critic_uses_target_nets_for_bootstrap():
    nets = _nets()
    rng = np.random.default_rng(8)
    s, a, r, s2 = _batch_from(nets, rng)
    a2 = nets.target_actor.forward(s2)
    q2 = nets.target_critic.forward(np.hstack([s2, a2])).ravel()
    y = r + 0.9 * q2
    q = nets.critic.forward(np.hstack([s, a])).ravel()
    expected = float(np.mean((q - y) ** 2))
    loss = critic_update(nets, (s, a, r, s2), alpha=1e-4, discount=0.9)
    assert loss == pytest.approx(expected, rel=1e-12)


def test_non_finite_loss_aborts():
    nets = _nets()
    s = np.full((2, 4), 1.0)
    a = np.full((2, 2), 0.5)
    r = np.array([np.inf, 0.0])
    with pytest.raises(FloatingPointError):
        critic_update(nets, (s, a, r, s.copy()), alpha=1e-3, discount=0.0)


# ---------------------------------------------------------------------------
# actor update
# ---------------------------------------------------------------------------

def test_constant_critic_leaves_actor_unchanged():
    nets = _nets()
    # zero-weight critic outputs a constant, so dQ/da = 0 everywhere
    nets.critic = Mlp([6, 4, 1], "identity")
    nets.critic.biases[1][:] = 3.0
    rng = np.random.default_rng(9)
    s = rng.normal(size=(8, 4))
    before = nets.actor.params_flat()
    mean_q = actor_update(nets, (s, None, None, None), alpha=1e-2)
    assert mean_q == pytest.approx(3.0)
    assert np.array_equal(nets.actor.params_flat(), before)


class QuadraticCritic:
    """Q(s, a) = -||a - target||^2, with exact gradients; duck-types Mlp."""

    def __init__(self, state_dim, target):
        self.state_dim = state_dim
        self.target = np.asarray(target, dtype=float)
        self._a = None

    def forward(self, x):
        a = np.asarray(x)[:, self.state_dim:]
        self._a = a
        return -np.sum((a - self.target) ** 2, axis=1, keepdims=True)

    def backward(self, grad_out):
        grad_a = grad_out * (-2.0 * (self._a - self.target))
        grad_in = np.hstack([np.zeros((grad_a.shape[0], self.state_dim)), grad_a])
        return None, grad_in


def test_actor_climbs_toward_quadratic_optimum():
    nets = _nets(state_dim=3, action_dim=2)
    target = np.array([0.3, -0.4])
    nets.critic = QuadraticCritic(3, target)
    s = np.tile(np.array([0.2, 0.4, -0.1]), (4, 1))
    distances = []
    for _ in range(300):
        actor_update(nets, (s, None, None, None), alpha=5e-3)
        distances.append(float(np.linalg.norm(nets.actor.forward(s[0]) - target)))
    assert all(b <= a + 1e-12 for a, b in zip(distances, distances[1:]))
    assert distances[-1] < 0.05


def test_actor_gradient_matches_finite_differences():
    """The chained dQ/dpsi recovered from one SGD step agrees with central
    differences of mean Q(s, pi_psi(s))."""
    nets = _nets(state_dim=3, action_dim=2, hidden=(6,), seed=3)
    rng = np.random.default_rng(10)
    s = rng.normal(size=(5, 3))
    alpha = 1e-3

    before = nets.actor.params_flat()
    actor_update(nets, (s, None, None, None), alpha=alpha)
    analytic = (nets.actor.params_flat() - before) / alpha
    nets.actor.set_params_flat(before)

    def objective(flat):
        nets.actor.set_params_flat(flat)
        a = nets.actor.forward(s)
        return float(np.mean(nets.critic.forward(np.hstack([s, a]))))

    h = 1e-5
    fd = np.zeros_like(before)
    for i in range(before.size):
        up = before.copy()
        up[i] += h
        down = before.copy()
        down[i] -= h
        fd[i] = (objective(up) - objective(down)) / (2 * h)
    nets.actor.set_params_flat(before)
    denom = np.maximum(np.abs(analytic) + np.abs(fd), 1e-8)
    assert np.max(np.abs(analytic - fd) / denom) < 1e-4


# ---------------------------------------------------------------------------
# soft updates
# ---------------------------------------------------------------------------

def _perturb(net):
    from edgeraft.nets import MlpGrads

    return MlpGrads(
        [np.ones_like(w) for w in net.weights], [np.ones_like(b) for b in net.biases]
    )


def test_soft_update_kappa_one_freezes_targets():
    nets = _nets()
    before = nets.target_actor.params_flat()
    nets.actor.apply_gradients(_perturb(nets.actor), 1.0)
    soft_update(nets, kappa=1.0)
    assert np.array_equal(nets.target_actor.params_flat(), before)


def test_soft_update_kappa_zero_copies_online():
    nets = _nets()
    nets.actor.apply_gradients(_perturb(nets.actor), 0.5)
    soft_update(nets, kappa=0.0)
    assert np.array_equal(nets.target_actor.params_flat(), nets.actor.params_flat())
    assert np.array_equal(nets.target_critic.params_flat(), nets.critic.params_flat())


def test_soft_update_elementwise_arithmetic():
    nets = _nets()
    for net in (nets.target_actor, nets.target_critic):
        net.set_params_flat(np.zeros_like(net.params_flat()))
    soft_update(nets, kappa=0.9)
    assert np.allclose(nets.target_actor.params_flat(), 0.1 * nets.actor.params_flat())


def test_soft_update_contracts_geometrically():
    nets = _nets()
    kappa = 0.9
    gap0 = nets.target_actor.params_flat() - nets.actor.params_flat()
    nets.target_actor.set_params_flat(nets.actor.params_flat() + np.ones_like(gap0))
    for k in range(1, 30):
        soft_update(nets, kappa)
        gap = nets.target_actor.params_flat() - nets.actor.params_flat()
        assert np.allclose(gap, kappa**k * np.ones_like(gap), atol=1e-10)


# ---------------------------------------------------------------------------
# replay deque
# ---------------------------------------------------------------------------

def _t(i):
    return Transition(np.array([float(i)]), np.array([float(i)]), float(i), np.array([float(i)]))


def test_replay_keeps_last_min_k_c_in_order():
    for pushes, capacity in [(3, 10), (10, 10), (17, 5), (100, 7)]:
        buf = ReplayDeque(capacity)
        for i in range(pushes):
            buf.append(_t(i))
        expected = list(range(max(0, pushes - capacity), pushes))
        assert len(buf) == min(pushes, capacity)
        assert [int(buf[i].r) for i in range(len(buf))] == expected


def test_replay_sample_shapes_and_membership():
    buf = ReplayDeque(8)
    for i in range(20):
        buf.append(_t(i))
    s, a, r, s2 = buf.sample(np.random.default_rng(0), 16)
    assert s.shape == (16, 1) and a.shape == (16, 1) and r.shape == (16,)
    assert set(r.astype(int)) <= set(range(12, 20))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def test_warmup_dominating_run_never_updates():
    env = FakeEnv()
    cfg = AgentConfig(max_epochs=10, warmup_epochs=10, hidden=(4,), capacity=64)
    nets, logs = train(env, cfg, seed=5)
    fresh = AgentNets.create(env.state_dim, env.action_dim, (4,), np.random.default_rng(5))
    assert np.array_equal(nets.actor.params_flat(), fresh.actor.params_flat())
    assert np.array_equal(nets.critic.params_flat(), fresh.critic.params_flat())
    assert all(l.critic_loss is None and l.mean_q is None for l in logs)


def test_training_pushes_every_transition_in_order():
    env = FakeEnv()
    replay = ReplayDeque(16)
    cfg = AgentConfig(max_epochs=3, warmup_epochs=10, hidden=(4,), capacity=16)
    _, logs = train(env, cfg, seed=6, replay=replay)
    assert len(replay) == 3
    assert [replay[i].r for i in range(3)] == [l.reward for l in logs]


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        env = FakeEnv()
        cfg = AgentConfig(max_epochs=30, warmup_epochs=5, batch_size=8, hidden=(4,))
        nets, logs = train(env, cfg, seed=7)
        runs.append((nets.actor.params_flat(), [(l.reward, l.critic_loss) for l in logs]))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_updates_start_strictly_after_warmup():
    env = FakeEnv()
    cfg = AgentConfig(max_epochs=12, warmup_epochs=6, batch_size=4, hidden=(4,))
    _, logs = train(env, cfg, seed=8)
    assert all(l.critic_loss is None for l in logs[:6])
    assert all(l.critic_loss is not None for l in logs[6:])


def test_episode_counter_advances_on_done():
    env = FakeEnv(epochs_per_episode=4)
    cfg = AgentConfig(max_epochs=10, warmup_epochs=20, hidden=(4,))
    _, logs = train(env, cfg, seed=9)
    assert [l.episode for l in logs] == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]


# ---------------------------------------------------------------------------
# config validation and checkpoints
# ---------------------------------------------------------------------------

def test_agent_config_validation():
    with pytest.raises(ValueError, match="alpha_critic"):
        AgentConfig(alpha_critic=0.0)
    with pytest.raises(ValueError, match="discount"):
        AgentConfig(discount=1.0)
    with pytest.raises(ValueError, match="soft_kappa"):
        AgentConfig(soft_kappa=0.0)
    with pytest.raises(ValueError, match="batch_size"):
        AgentConfig(batch_size=0)


def test_checkpoint_round_trip(tmp_path):
    nets = _nets(state_dim=5, action_dim=3, hidden=(6, 4), seed=11)
    path = tmp_path / "agent.nets"
    save_nets(nets, path)
    loaded = load_nets(path)
    for a, b in [
        (nets.actor, loaded.actor),
        (nets.critic, loaded.critic),
        (nets.target_actor, loaded.target_actor),
        (nets.target_critic, loaded.target_critic),
    ]:
        assert a.sizes == b.sizes
        assert a.output_activation == b.output_activation
        assert np.array_equal(a.params_flat(), b.params_flat())


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.nets"
    path.write_bytes(b"NOTAFILE" + b"\x00" * 32)
    with pytest.raises(ValueError):
        load_nets(path)
