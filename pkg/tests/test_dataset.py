import numpy as np
import pytest

from gas import datagen, maze
from gas.dataset import (
    Dataset,
    RelabelConfig,
    Trajectory,
    load_dataset,
    load_dataset_jsonl,
    sample_subgoal_step,
    sample_subgoal_td,
    sample_tdr_batch,
    save_dataset,
    save_dataset_jsonl,
    step_subgoal_state_indices,
    td_subgoal_state_indices,
)


class LinearEmbed:
    """Stand-in for a trained embedding: latent = state (identity map)."""

    def embed(self, states):
        return np.asarray(states, dtype=np.float64)


def chain_dataset(lengths, dim=2, speed=1.0, seed=0):
    """Straight-line trajectories moving `speed` per step along axis 0."""
    rng = np.random.default_rng(seed)
    trajs = []
    for n in lengths:
        start = rng.uniform(0, 5, size=dim)
        obs = np.tile(start, (n + 1, 1))
        obs[:, 0] += speed * np.arange(n + 1)
        acts = np.full((n, 2), speed, dtype=np.float32)
        trajs.append(Trajectory(obs.astype(np.float32), acts))
    return Dataset(trajs, style="test", seed=seed)


def small_real_dataset():
    env = maze.Gridworld(maze.builtin_maze("open_10"))
    return datagen.generate_dataset(env, "explore", 2500, seed=4)


# --- containers ---------------------------------------------------------------

def test_trajectory_shape_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros((1, 2)))


def test_dataset_rejects_empty():
    with pytest.raises(ValueError):
        Dataset([])


def test_transition_chain_invariant():
    data = small_real_dataset()
    idx = np.random.default_rng(0).integers(data.n_transitions - 1, size=50)
    for i in idx:
        tr = data.transition(int(i))
        nxt = data.state(tr.trajectory_id, tr.step_index + 1)
        assert np.array_equal(tr.next_state, nxt)


# --- persistence ----------------------------------------------------------------

def test_binary_round_trip_byte_identical(tmp_path):
    data = small_real_dataset()
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_dataset(p1, data)
    loaded = load_dataset(p1)
    assert loaded.style == data.style and loaded.seed == data.seed
    save_dataset(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_jsonl_round_trip(tmp_path):
    data = chain_dataset([5, 3])
    p = tmp_path / "d.jsonl"
    save_dataset_jsonl(p, data)
    loaded = load_dataset_jsonl(p)
    assert len(loaded.trajectories) == 2
    for a, b in zip(data.trajectories, loaded.trajectories):
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.actions, b.actions)


# --- goal relabeling -------------------------------------------------------------

def test_relabel_config_validation():
    with pytest.raises(ValueError):
        RelabelConfig(p_future=0.7, p_uniform=0.4)
    with pytest.raises(ValueError):
        RelabelConfig(p_geometric=0.0)


def test_future_draws_are_strictly_future_same_trajectory():
    data = small_real_dataset()
    rng = np.random.default_rng(1)
    cfg = RelabelConfig()
    _, _, _, meta = sample_tdr_batch(data, cfg, 4096, rng, with_meta=True)
    fut = meta["future_branch"]
    assert fut.any()
    assert np.all(meta["goal_traj"][fut] == meta["anchor_traj"][fut])
    assert np.all(meta["goal_step"][fut] > meta["anchor_step"][fut])


def test_goal_never_equals_anchor_state():
    data = small_real_dataset()
    rng = np.random.default_rng(2)
    _, _, _, meta = sample_tdr_batch(data, RelabelConfig(), 8192, rng, with_meta=True)
    clash = (meta["goal_traj"] == meta["anchor_traj"]) & (meta["goal_step"] == meta["anchor_step"])
    assert not clash.any()


def test_degenerate_geometric_gives_immediate_successor():
    data = small_real_dataset()
    rng = np.random.default_rng(3)
    cfg = RelabelConfig(p_future=1.0, p_uniform=0.0, p_geometric=1.0)
    s, s_next, g, meta = sample_tdr_batch(data, cfg, 512, rng, with_meta=True)
    assert np.all(meta["goal_step"] == meta["anchor_step"] + 1)
    assert np.array_equal(g, s_next)


def test_future_fraction_matches_mixture_weight():
    data = small_real_dataset()
    rng = np.random.default_rng(7)
    cfg = RelabelConfig()  # defaults: 0.625 future / 0.375 uniform
    count, total = 0, 100_000
    for _ in range(total // 10_000):
        _, _, _, meta = sample_tdr_batch(data, cfg, 10_000, rng, with_meta=True)
        same = meta["goal_traj"] == meta["anchor_traj"]
        future = same & (meta["goal_step"] > meta["anchor_step"])
        count += int(future.sum())
    assert abs(count / total - 0.625) < 0.01


def test_next_state_is_stored_successor():
    data = small_real_dataset()
    rng = np.random.default_rng(9)
    s, s_next, g, meta = sample_tdr_batch(data, RelabelConfig(), 256, rng, with_meta=True)
    for i in range(0, 256, 17):
        tid, step = int(meta["anchor_traj"][i]), int(meta["anchor_step"][i])
        assert np.array_equal(s[i], data.state(tid, step))
        assert np.array_equal(s_next[i], data.state(tid, step + 1))


# --- subgoal sampling -------------------------------------------------------------

def test_step_subgoal_examples():
    data = chain_dataset([10])
    assert np.array_equal(sample_subgoal_step(data, 0, 3, 0), data.state(0, 3))
    assert np.array_equal(sample_subgoal_step(data, 0, 3, 1), data.state(0, 4))
    assert np.array_equal(sample_subgoal_step(data, 0, 3, 99), data.state(0, 10))


def test_td_subgoal_uniform_speed():
    data = chain_dataset([20], speed=1.0)
    out = sample_subgoal_td(data, 0, 0, 8.0, LinearEmbed())
    assert np.array_equal(out, data.state(0, 8))


def test_td_subgoal_stationary_falls_back_to_final():
    data = chain_dataset([6], speed=0.0)
    out = sample_subgoal_td(data, 0, 1, 4.0, LinearEmbed())
    assert np.array_equal(out, data.state(0, 6))


def test_td_subgoal_matches_linear_scan_oracle():
    rng = np.random.default_rng(11)
    obs = rng.normal(size=(40, 2)).astype(np.float32).cumsum(axis=0)
    data = Dataset([Trajectory(obs, np.zeros((39, 2), dtype=np.float32))])
    emb = LinearEmbed()
    h_td = 3.0
    for t in range(0, 39, 5):
        expected_idx = 39
        base = obs[t].astype(np.float64)
        for k in range(t + 1, 40):
            if np.linalg.norm(obs[k].astype(np.float64) - base) >= h_td:
                expected_idx = k
                break
        got = sample_subgoal_td(data, 0, t, h_td, emb)
        assert np.array_equal(got, obs[expected_idx])


def test_td_subgoal_table_matches_per_sample_op():
    data = small_real_dataset()
    emb = LinearEmbed()
    table = td_subgoal_state_indices(data, emb, 4.0)
    idx = data.index()
    rng = np.random.default_rng(13)
    for i in rng.integers(data.n_transitions, size=100):
        tid, step = int(idx["tr_traj"][i]), int(idx["tr_step"][i])
        expected = sample_subgoal_td(data, tid, step, 4.0, emb)
        got = idx["observations"][table[int(i)]]
        assert np.array_equal(got, expected)


def test_step_subgoal_table_matches_per_sample_op():
    data = small_real_dataset()
    table = step_subgoal_state_indices(data, 5)
    idx = data.index()
    rng = np.random.default_rng(15)
    for i in rng.integers(data.n_transitions, size=100):
        tid, step = int(idx["tr_traj"][i]), int(idx["tr_step"][i])
        expected = sample_subgoal_step(data, tid, step, 5)
        assert np.array_equal(idx["observations"][table[int(i)]], expected)


def test_td_subgoal_index_strictly_ahead_unless_fallback():
    data = small_real_dataset()
    emb = LinearEmbed()
    table = td_subgoal_state_indices(data, emb, 2.0)
    idx = data.index()
    anchors_flat = idx["state_offset"][idx["tr_traj"]] + idx["tr_step"]
    assert np.all(table > anchors_flat)
