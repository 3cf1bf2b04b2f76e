import numpy as np
import pytest

from gas import agent, graph, maze, planner, tdr


class PlaneEmbed:
    """Identity embedding so latent space == state space in the tests."""

    latent_dim = 2

    def embed(self, states):
        return np.asarray(states, dtype=np.float64)


def line_graph(xs, h_td=2.0):
    nodes = np.array([[x, 0.0] for x in xs])
    return graph.TdGraph(nodes, graph.connect_edges(nodes, h_td), h_td=h_td)


# --- select_subgoal ---------------------------------------------------------------

def test_select_goal_node_when_on_it():
    g = line_graph([0.0, 2.0, 4.0])
    dists = graph.dijkstra_from_goal(np.array([4.0, 0.0]), g)
    assert dists.dists[2] == 0.0
    assert planner.select_subgoal(np.array([4.0, 0.0]), g, dists, 2.0) == 2


def test_select_prefers_lower_goal_distance_at_equal_range():
    nodes = np.array([[0.0, 1.0], [0.0, -1.0]])
    g = graph.TdGraph(nodes, [], h_td=5.0)
    dists = graph.GoalDistances(dists=np.array([10.0, 2.0]), goal_latent=np.array([0.0, -3.0]))
    assert planner.select_subgoal(np.zeros(2), g, dists, 5.0) == 1


def test_select_matches_bruteforce_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 30))
        nodes = rng.normal(scale=3.0, size=(k, 2))
        h_td = float(rng.uniform(0.5, 4.0))
        g = graph.TdGraph(nodes, graph.connect_edges(nodes, h_td), h_td=h_td)
        goal = rng.normal(scale=3.0, size=2)
        dists = graph.dijkstra_from_goal(goal, g)
        h_cur = rng.normal(scale=3.0, size=2)
        got = planner.select_subgoal(h_cur, g, dists, h_td)

        direct = np.linalg.norm(nodes - h_cur, axis=1)
        near = np.nonzero(direct <= h_td)[0]
        if near.size == 0:
            expected = int(np.argmin(direct))
        else:
            scores = dists.dists[near] + direct[near]
            if np.isfinite(scores).any():
                expected = int(near[np.argmin(scores)])
            else:
                expected = int(np.argmin(np.linalg.norm(nodes - goal, axis=1)))
        assert got == expected


def test_select_is_pure():
    g = line_graph([0.0, 2.0])
    dists = graph.dijkstra_from_goal(np.array([2.0, 0.0]), g)
    h = np.array([0.5, 0.1])
    assert planner.select_subgoal(h, g, dists, 2.0) == planner.select_subgoal(h, g, dists, 2.0)


def test_select_empty_graph_errors():
    g = graph.TdGraph(np.empty((0, 2)), [], h_td=1.0)
    dists = graph.GoalDistances(dists=np.empty(0), goal_latent=np.zeros(2))
    with pytest.raises(planner.PlannerError):
        planner.select_subgoal(np.zeros(2), g, dists, 1.0)


# --- run_episode -------------------------------------------------------------------

def dummy_agent(latent_dim=2):
    cfg = agent.AgentConfig(hidden=(8,))
    return agent.init_agent(2, 2, latent_dim, cfg, np.random.default_rng(0))


class DirectionFollower:
    """Hand policy: walk along the commanded latent direction (identity
    embedding makes that the state direction)."""

    latent_dim = 2
    a_max = 1.0

    def __init__(self):
        base = dummy_agent()
        self.__dict__.update(base.__dict__)


def test_goal_at_start_is_immediate_success():
    spec = maze.builtin_maze("open_5")
    env = maze.PointMaze(spec)
    g = line_graph([1.5, 3.5])
    start = np.array([2.0, 2.0], dtype=np.float32)
    out = planner.run_episode(env, PlaneEmbed(), dummy_agent(), g, start, start, 2.0, 10)
    assert out.success and out.steps == 0


def test_zero_budget_fails_without_stepping():
    spec = maze.builtin_maze("open_5")
    env = maze.PointMaze(spec)
    g = line_graph([1.5, 3.5])
    start = np.array([1.5, 1.5], dtype=np.float32)
    goal = np.array([4.5, 4.5], dtype=np.float32)
    out = planner.run_episode(env, PlaneEmbed(), dummy_agent(), g, start, goal, 2.0, 0)
    assert not out.success and out.steps == 0


def test_episode_never_exceeds_budget_and_stays_in_bounds():
    spec = maze.builtin_maze("open_5")
    env = maze.PointMaze(spec)
    g = line_graph([1.5, 2.5, 3.5])
    start = np.array([1.2, 1.2], dtype=np.float32)
    goal = np.array([4.5, 4.5], dtype=np.float32)
    out = planner.run_episode(env, PlaneEmbed(), dummy_agent(), g, start, goal, 2.0, 25)
    assert out.steps <= 25
    assert len(out.subgoals) == out.steps


def test_dimension_mismatch_rejected():
    spec = maze.builtin_maze("open_5")
    env = maze.PointMaze(spec)
    g = line_graph([1.5, 3.5])
    cfg = agent.AgentConfig(hidden=(8,))
    wrong = agent.init_agent(2, 2, 7, cfg, np.random.default_rng(0))
    with pytest.raises(planner.PlannerError):
        planner.run_episode(env, PlaneEmbed(), wrong, g,
                            np.zeros(2, dtype=np.float32), np.ones(2, dtype=np.float32), 2.0, 5)


def test_max_steps_default_uses_bfs_with_floor():
    spec = maze.builtin_maze("two_room")
    d = maze.bfs_distance(spec, (6, 2), (6, 14))
    assert planner.default_max_steps(spec, (6, 2), (6, 14)) == max(200, 4 * int(d))
    assert planner.default_max_steps(spec, (6, 2), (6, 14), factor=10) == 10 * int(d)


# --- evaluate ----------------------------------------------------------------------

class ScriptedEnv:
    """Env stub whose success is predetermined per rollout."""

    def __init__(self, spec):
        self.maze = spec
        self.a_max = 1.0

    def reset(self, rng):
        return np.array([1.5, 1.5], dtype=np.float32)

    def state_cell(self, state):
        return self.maze.cell_of(np.asarray(state, dtype=np.float64))

    def step(self, state, action):
        return state  # never moves


def test_evaluate_all_fail_scores_zero():
    spec = maze.builtin_maze("open_5")
    env = ScriptedEnv(spec)
    g = line_graph([1.5, 3.5])
    goals = [np.array([4.5, 4.5], dtype=np.float32)]
    rows = planner.evaluate(env, PlaneEmbed(), dummy_agent(), g, goals, 3, [0, 1], 2.0, max_steps=5)
    assert planner.normalized_return(rows) == 0.0


def test_evaluate_all_succeed_scores_hundred():
    spec = maze.builtin_maze("open_5")
    env = ScriptedEnv(spec)
    g = line_graph([1.5, 3.5])
    goals = [np.array([1.5, 1.5], dtype=np.float32)]  # equals the start
    rows = planner.evaluate(env, PlaneEmbed(), dummy_agent(), g, goals, 4, [0], 2.0, max_steps=5)
    assert planner.normalized_return(rows) == 100.0


def test_evaluate_half_split_scores_fifty():
    rows = [
        {"goal_id": 0, "seed": 0, "success_rate": 1.0, "mean_steps": 3.0},
        {"goal_id": 1, "seed": 0, "success_rate": 0.0, "mean_steps": 5.0},
    ]
    assert planner.normalized_return(rows) == 50.0


def test_eval_csv_round_trip(tmp_path):
    rows = [
        {"goal_id": 0, "seed": 0, "success_rate": 0.75, "mean_steps": 12.5},
        {"goal_id": 1, "seed": 3, "success_rate": 0.5, "mean_steps": 40.0},
    ]
    p = tmp_path / "eval.csv"
    planner.write_eval_csv(rows, p)
    header = p.read_text().splitlines()[0]
    assert header == "goal_id,seed,success_rate,mean_steps"
    assert planner.read_eval_csv(p) == rows


def test_evaluate_requires_goals():
    spec = maze.builtin_maze("open_5")
    env = ScriptedEnv(spec)
    g = line_graph([1.5])
    with pytest.raises(planner.PlannerError):
        planner.evaluate(env, PlaneEmbed(), dummy_agent(), g, [], 1, [0], 2.0)
