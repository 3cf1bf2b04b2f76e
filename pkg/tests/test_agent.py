import numpy as np
import pytest
from scipy.stats import chisquare

from gas import agent, nn, tdr
from oracles import check_gradients


def tiny_tdr(state_dim=2, latent_dim=4, seed=0):
    cfg = tdr.TdrConfig(latent_dim=latent_dim, hidden=(16,))
    return tdr.init_tdr(state_dim, cfg, np.random.default_rng(seed))


def tiny_agent(state_dim=2, action_dim=2, latent_dim=4, seed=0, dtype=np.float32, **kw):
    cfg = agent.AgentConfig(hidden=(16, 16), **kw)
    model = agent.init_agent(state_dim, action_dim, latent_dim, cfg, np.random.default_rng(seed))
    if dtype is not np.float32:
        model.critic = model.critic.astype(dtype)
        model.critic_target = model.critic_target.astype(dtype)
        model.value = model.value.astype(dtype)
        model.actor = model.actor.astype(dtype)
    return model


def random_critic_batch(b=16, state_dim=2, action_dim=2, latent_dim=4, seed=1):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(b, state_dim))
    a = rng.normal(size=(b, action_dim))
    s_next = s + 0.2 * rng.normal(size=(b, state_dim))
    dirs = agent.sample_directions(rng, b, latent_dim)
    rew = rng.normal(size=b)
    return s, a, s_next, dirs, rew


# --- directions -----------------------------------------------------------------

def test_direction_unit_norm():
    rng = np.random.default_rng(0)
    dirs = agent.sample_directions(rng, 1000, 8)
    assert np.all(np.abs(np.linalg.norm(dirs, axis=1) - 1.0) < 1e-6)


def test_direction_mean_near_zero():
    rng = np.random.default_rng(1)
    dirs = agent.sample_directions(rng, 100_000, 5)
    assert np.all(np.abs(dirs.mean(axis=0)) < 0.02)


def test_direction_angles_uniform_in_2d():
    rng = np.random.default_rng(2)
    dirs = agent.sample_directions(rng, 100_000, 2)
    angles = np.arctan2(dirs[:, 1], dirs[:, 0])
    counts, _ = np.histogram(angles, bins=16, range=(-np.pi, np.pi))
    assert chisquare(counts).pvalue > 0.01


# --- intrinsic reward --------------------------------------------------------------

def test_intrinsic_reward_zero_for_no_motion():
    model = tiny_tdr()
    s = np.array([0.3, 0.4], dtype=np.float32)
    h = agent.sample_direction(np.random.default_rng(3), 4)
    assert agent.intrinsic_reward(model, s, s, h) == pytest.approx(0.0, abs=1e-7)


def test_intrinsic_reward_parallel_and_orthogonal():
    class PlaneEmbed:
        def embed(self, states):
            return np.asarray(states, dtype=np.float64)

    m = PlaneEmbed()
    s = np.array([0.0, 0.0])
    s2 = np.array([3.0, 0.0])
    assert agent.intrinsic_reward(m, s, s2, np.array([1.0, 0.0])) == pytest.approx(3.0)
    assert agent.intrinsic_reward(m, s, s2, np.array([0.0, 1.0])) == pytest.approx(0.0, abs=1e-12)


def test_intrinsic_reward_linear_in_direction():
    model = tiny_tdr()
    rng = np.random.default_rng(4)
    s = rng.normal(size=2).astype(np.float32)
    s2 = rng.normal(size=2).astype(np.float32)
    u = agent.sample_direction(rng, 4)
    w = agent.sample_direction(rng, 4)
    a, b = 0.7, -1.3
    lhs = agent.intrinsic_reward(model, s, s2, a * u + b * w)
    rhs = a * agent.intrinsic_reward(model, s, s2, u) + b * agent.intrinsic_reward(model, s, s2, w)
    assert lhs == pytest.approx(rhs, rel=1e-9)


# --- subgoal direction ---------------------------------------------------------------

def test_direction_to_subgoal_unit_and_345():
    class PlaneEmbed:
        def embed(self, states):
            return np.asarray(states, dtype=np.float64)

    m = PlaneEmbed()
    d = agent.direction_to_subgoal(m, np.array([0.0, 0.0]), np.array([3.0, 4.0]))
    assert np.allclose(d, [0.6, 0.8])
    assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-9)
    d2 = agent.direction_to_subgoal(m, np.array([0.0, 0.0]), np.array([30.0, 40.0]))
    assert np.allclose(d, d2)


def test_direction_to_subgoal_rejects_zero_displacement():
    model = tiny_tdr()
    s = np.array([0.1, 0.2], dtype=np.float32)
    with pytest.raises(ValueError):
        agent.direction_to_subgoal(model, s, s)


def test_batched_directions_mask_degenerate_rows():
    h_from = np.array([[0.0, 0.0], [1.0, 1.0]])
    h_to = np.array([[3.0, 4.0], [1.0, 1.0]])
    dirs, ok = agent.directions_from_latents(h_from, h_to)
    assert ok.tolist() == [True, False]
    assert np.allclose(dirs[0], [0.6, 0.8])


# --- critic --------------------------------------------------------------------------

def test_critic_regresses_to_reward_at_gamma_zero():
    model = tiny_agent(gamma=0.0)
    model.gamma = 0.0
    batch = random_critic_batch()
    opt_q = nn.init_adam(model.critic, lr=3e-3)
    opt_v = nn.init_adam(model.value, lr=3e-3)
    for _ in range(800):
        agent.critic_step(model, opt_q, opt_v, batch, target_tau=0.01)
    s, a, _, dirs, rew = batch
    q = nn.forward(model.critic, np.concatenate([s, a, dirs], axis=1).astype(np.float32))[:, 0]
    assert np.max(np.abs(q - rew)) < 0.05


def test_value_loss_halves_mse_at_expectile_half():
    model = tiny_agent(expectile=0.5)
    model.expectile = 0.5
    batch = random_critic_batch(seed=5)
    s, a, s_next, dirs, rew = batch
    _, loss_v = agent.critic_losses(model, batch)
    q_t = nn.forward(model.critic_target, np.concatenate([s, a, dirs], axis=1).astype(np.float32))[:, 0]
    v = nn.forward(model.value, np.concatenate([s, dirs], axis=1).astype(np.float32))[:, 0]
    mse = float(np.mean((q_t - v) ** 2))
    assert loss_v == pytest.approx(0.5 * mse, rel=1e-6)


def test_critic_target_uses_value_net_not_target_critic():
    # zeroing the value net changes the critic's regression target ...
    model = tiny_agent(seed=7, dtype=np.float64)
    batch = random_critic_batch(seed=8)
    loss_q_before, _ = agent.critic_losses(model, batch)
    for p in model.value.params():
        p[...] = 0.0
    loss_q_after, _ = agent.critic_losses(model, batch)
    assert loss_q_before != loss_q_after


def test_value_target_uses_target_critic():
    # ... and zeroing the target critic changes the value regression target
    model = tiny_agent(seed=9, dtype=np.float64)
    batch = random_critic_batch(seed=10)
    _, loss_v_before = agent.critic_losses(model, batch)
    for p in model.critic_target.params():
        p[...] = 0.0
    _, loss_v_after = agent.critic_losses(model, batch)
    assert loss_v_before != loss_v_after
    # while the online critic leaves the value loss untouched
    model2 = tiny_agent(seed=9, dtype=np.float64)
    _, before = agent.critic_losses(model2, batch)
    for p in model2.critic.params():
        p[...] = 0.0
    _, after = agent.critic_losses(model2, batch)
    assert before == after


def test_critic_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    for trial in range(5):
        model = tiny_agent(seed=trial, dtype=np.float64)
        batch = random_critic_batch(seed=trial + 20, b=8)

        def q_loss_and_grads(net):
            model.critic = net
            loss_q, _, grads_q, _ = agent.critic_grads(model, batch)
            return loss_q, grads_q

        check_gradients(q_loss_and_grads, model.critic, rng, n_coords=10)

        def v_loss_and_grads(net):
            model.value = net
            _, loss_v, _, grads_v = agent.critic_grads(model, batch)
            return loss_v, grads_v

        check_gradients(v_loss_and_grads, model.value, rng, n_coords=10)


# --- actor ---------------------------------------------------------------------------

def test_actor_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    for trial in range(5):
        model = tiny_agent(seed=trial + 3, dtype=np.float64, alpha=0.5)
        model.alpha = 0.5
        b = 8
        data_rng = np.random.default_rng(trial + 40)
        s = data_rng.normal(size=(b, 2))
        a = data_rng.normal(size=(b, 2))
        dirs = agent.sample_directions(data_rng, b, 4)

        def loss_and_grads(net):
            model.actor = net
            return agent.actor_grads(model, s, a, dirs)

        check_gradients(loss_and_grads, model.actor, rng, n_coords=10)


def test_actor_high_alpha_converges_to_behavior_cloning():
    rng = np.random.default_rng(15)
    b = 64
    s = rng.normal(size=(b, 2))
    dirs = agent.sample_directions(rng, b, 4)
    a = 0.4 * np.ones((b, 2))

    def train(alpha):
        model = tiny_agent(seed=5, alpha=alpha)
        model.alpha = alpha
        opt = nn.init_adam(model.actor, lr=3e-3)
        for _ in range(1500):
            agent.actor_step(model, opt, s, a, dirs)
        return nn.forward(model.actor, np.concatenate([s, dirs], axis=1).astype(np.float32))

    mu_bc_limit = train(alpha=1e3)
    assert np.mean(np.abs(mu_bc_limit - a)) <= 1e-2


def test_actor_alpha_zero_is_pure_critic_ascent():
    model = tiny_agent(seed=6, dtype=np.float64, alpha=0.0)
    model.alpha = 0.0
    rng = np.random.default_rng(16)
    s = rng.normal(size=(4, 2))
    a = rng.normal(size=(4, 2))
    dirs = agent.sample_directions(rng, 4, 4)
    _, grads = agent.actor_grads(model, s, a, dirs)
    # changing the dataset actions must not change the gradient when alpha=0
    _, grads2 = agent.actor_grads(model, s, a + 5.0, dirs)
    for g1, g2 in zip(grads, grads2):
        assert np.allclose(g1, g2)


def test_act_bounds_and_determinism():
    model = tiny_agent()
    s = np.array([0.2, -0.1], dtype=np.float32)
    h = agent.sample_direction(np.random.default_rng(17), 4)
    a1 = agent.act(model, s, h, deterministic=True)
    a2 = agent.act(model, s, h, deterministic=True)
    assert np.array_equal(a1, a2)
    assert np.all(np.abs(a1) <= model.a_max)
    rng = np.random.default_rng(18)
    for _ in range(50):
        a = agent.act(model, s, h, deterministic=False, rng=rng)
        assert np.all(np.abs(a) <= model.a_max)


def test_act_zero_actor_outputs_zero():
    model = tiny_agent()
    for p in model.actor.params():
        p[...] = 0.0
    s = np.array([0.5, 0.5], dtype=np.float32)
    h = agent.sample_direction(np.random.default_rng(19), 4)
    assert np.allclose(agent.act(model, s, h, deterministic=True), 0.0)


# --- checkpoint ------------------------------------------------------------------------

def test_agent_checkpoint_round_trip(tmp_path):
    model = tiny_agent()
    p = tmp_path / "agent.ckpt"
    agent.save_agent(p, model)
    loaded = agent.load_agent(p)
    assert (loaded.state_dim, loaded.action_dim, loaded.latent_dim) == (2, 2, 4)
    assert loaded.alpha == model.alpha and loaded.log_std == model.log_std
    s = np.array([0.1, 0.9], dtype=np.float32)
    h = agent.sample_direction(np.random.default_rng(20), 4)
    assert np.array_equal(
        agent.act(model, s, h, deterministic=True), agent.act(loaded, s, h, deterministic=True)
    )
    p2 = tmp_path / "agent2.ckpt"
    agent.save_agent(p2, loaded)
    assert p.read_bytes() == p2.read_bytes()
