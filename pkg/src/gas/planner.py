"""Task planning and execution over the latent graph.

Per episode: precompute every node's shortest distance to the goal, then at
each step pick the reachable node minimizing (distance to goal + distance
from the current latent), aim the low-level policy along the unit direction
to that node, and step the environment until the sparse success predicate
fires or the step budget runs out.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from gas import agent as agent_mod
from gas.graph import GoalDistances, TdGraph, dijkstra_from_goal
from gas.maze import SuccessPredicate, bfs_distance, reward


class PlannerError(RuntimeError):
    pass


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    subgoals: list[int] = field(default_factory=list)
    final_distance: float = float("nan")


def select_subgoal(h_cur: np.ndarray, graph: TdGraph, dists: GoalDistances, h_td: float,
                   goal_fallback: bool = True) -> int:
    """Reachable node (within h_td) minimizing goal distance plus approach
    cost. Falls back to the nearest node when nothing is in range, and to
    the node nearest the goal when every candidate is cut off. Lowest index
    wins ties.

    `goal_fallback=False` keeps the last fallback local (nearest node to the
    agent instead of to the goal); the no-stitching control uses this, since
    aiming at a far goal-side node would hand it a cross-trajectory subgoal.
    """
    if graph.n_nodes == 0:
        raise PlannerError("empty graph")
    h_cur = np.asarray(h_cur, dtype=np.float64)
    direct = np.linalg.norm(graph.nodes - h_cur, axis=1)
    near = direct <= h_td
    if not near.any():
        return int(np.argmin(direct))
    scores = np.where(near, dists.dists + direct, np.inf)
    if not np.isfinite(scores).any():
        if not goal_fallback:
            return int(np.argmin(direct))
        goal_gap = np.linalg.norm(graph.nodes - dists.goal_latent, axis=1)
        return int(np.argmin(goal_gap))
    return int(np.argmin(scores))


def default_max_steps(maze, start_cell, goal_cell, factor: int = 4, floor: int = 200) -> int:
    d = bfs_distance(maze, start_cell, goal_cell)
    if not np.isfinite(d):
        raise PlannerError(f"goal cell {goal_cell} unreachable from {start_cell}")
    return max(floor, int(factor * d))


def run_episode(
    env,
    tdr_model,
    agent_model,
    graph: TdGraph,
    start_state: np.ndarray,
    goal_state: np.ndarray,
    h_td: float,
    max_steps: int,
    rng: np.random.Generator | None = None,
    epsilon: float = 0.5,
    stochastic: bool = False,
    goal_dists: GoalDistances | None = None,
    goal_fallback: bool = True,
) -> EpisodeResult:
    if tdr_model.latent_dim != agent_model.latent_dim:
        raise PlannerError("embedding and agent latent dimensions disagree")
    if graph.nodes.shape[1] != tdr_model.latent_dim:
        raise PlannerError("graph latent dimension disagrees with the embedding")
    pred = SuccessPredicate(epsilon=epsilon)
    if goal_dists is None:
        goal_dists = dijkstra_from_goal(tdr_model.embed(np.asarray(goal_state, dtype=np.float32)), graph)

    state = np.asarray(start_state, dtype=np.float32)
    subgoals: list[int] = []
    if reward(state, goal_state, pred):
        return EpisodeResult(True, 0, subgoals, float(np.linalg.norm(state - goal_state)))

    for step in range(1, max_steps + 1):
        h_cur = tdr_model.embed(state)
        node = select_subgoal(h_cur, graph, goal_dists, h_td, goal_fallback=goal_fallback)
        subgoals.append(node)
        disp = graph.nodes[node] - np.asarray(h_cur, dtype=np.float64)
        norm = np.linalg.norm(disp)
        if norm < agent_mod.MIN_DIRECTION_NORM:
            # sitting exactly on the node: aim at the goal latent instead
            disp = dists_goal_direction(goal_dists, h_cur)
            norm = np.linalg.norm(disp)
        h_dir = (disp / norm) if norm >= agent_mod.MIN_DIRECTION_NORM else _unit0(graph.nodes.shape[1])
        action = agent_mod.act(agent_model, state, h_dir, deterministic=not stochastic, rng=rng)
        state = env.step(state, action)
        if reward(state, goal_state, pred):
            return EpisodeResult(True, step, subgoals, float(np.linalg.norm(state - goal_state)))
    return EpisodeResult(False, max_steps, subgoals, float(np.linalg.norm(state - goal_state)))


def dists_goal_direction(goal_dists: GoalDistances, h_cur: np.ndarray) -> np.ndarray:
    return goal_dists.goal_latent - np.asarray(h_cur, dtype=np.float64)


def _unit0(dim: int) -> np.ndarray:
    e = np.zeros(dim)
    e[0] = 1.0
    return e


def evaluate(
    env,
    tdr_model,
    agent_model,
    graph: TdGraph,
    goals: list[np.ndarray],
    rollouts_per_goal: int,
    seeds: list[int],
    h_td: float,
    max_steps: int | None = None,
    epsilon: float = 0.5,
    stochastic: bool = False,
    goal_fallback: bool = True,
) -> list[dict]:
    """Success rates per (goal, seed); scores are averaged success in [0, 1].
    Goal-distance precomputation is cached per goal within the run."""
    if not goals:
        raise PlannerError("need at least one goal")
    dist_cache: dict[bytes, GoalDistances] = {}
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for goal_id, goal_state in enumerate(goals):
            goal_state = np.asarray(goal_state, dtype=np.float32)
            key = goal_state.tobytes()
            if key not in dist_cache:
                dist_cache[key] = dijkstra_from_goal(tdr_model.embed(goal_state), graph)
            successes, steps_taken = 0, []
            for _ in range(rollouts_per_goal):
                start = env.reset(rng)
                if max_steps is None:
                    budget = default_max_steps(
                        env.maze, env.state_cell(start), env.state_cell(goal_state)
                    )
                else:
                    budget = max_steps
                result = run_episode(
                    env, tdr_model, agent_model, graph, start, goal_state, h_td,
                    budget, rng=rng, epsilon=epsilon, stochastic=stochastic,
                    goal_dists=dist_cache[key], goal_fallback=goal_fallback,
                )
                successes += int(result.success)
                steps_taken.append(result.steps)
            rows.append({
                "goal_id": goal_id,
                "seed": seed,
                "success_rate": successes / rollouts_per_goal,
                "mean_steps": float(np.mean(steps_taken)),
            })
    return rows


EVAL_COLUMNS = ["goal_id", "seed", "success_rate", "mean_steps"]


def write_eval_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=EVAL_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in EVAL_COLUMNS})


def read_eval_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        rows = []
        for rec in reader:
            rows.append({
                "goal_id": int(rec["goal_id"]),
                "seed": int(rec["seed"]),
                "success_rate": float(rec["success_rate"]),
                "mean_steps": float(rec["mean_steps"]),
            })
    return rows


def normalized_return(rows: list[dict]) -> float:
    """Mean success over all rows scaled to [0, 100]."""
    if not rows:
        return 0.0
    return 100.0 * float(np.mean([r["success_rate"] for r in rows]))
