"""Offline dataset generators for the desk-scale mazes.

Three regimes:
  * navigate — long noisy shortest-path rollouts to random far goals.
  * stitch   — short noisy segments between nearby cells, capped in length,
               so no single trajectory spans the maze.
  * explore  — random-direction walk, direction re-sampled every 10 steps,
               under high action noise.

All regimes share one noisy waypoint-following expert; the environment kind
(continuous point mass or gridworld) only changes how actions are applied.
Generation is deterministic given the seed.
"""
from __future__ import annotations

import numpy as np

from gas.dataset import Dataset, Trajectory
from gas.maze import Gridworld, MazeSpec, SuccessPredicate, bfs_distances, reward

EXPERT_NOISE = 0.3    # fraction of a_max, navigate/stitch expert
EXPLORE_NOISE = 0.6   # fraction of a_max, explore walk
EXPLORE_DRIFT = 0.7   # commanded speed fraction for explore directions
RESAMPLE_EVERY = 10


def explore_directions(n_steps: int, rng: np.random.Generator, resample_every: int = RESAMPLE_EVERY) -> np.ndarray:
    """Unit command directions for an explore walk; the direction changes
    only at step indices that are multiples of `resample_every`."""
    dirs = np.zeros((n_steps, 2))
    current = None
    for t in range(n_steps):
        if t % resample_every == 0:
            angle = rng.uniform(0.0, 2.0 * np.pi)
            current = np.array([np.cos(angle), np.sin(angle)])
        dirs[t] = current
    return dirs


def _expert_action(env, maze: MazeSpec, state: np.ndarray, goal_cell, goal_dists: np.ndarray,
                   rng: np.random.Generator, noise: float) -> np.ndarray:
    """Step toward the BFS-optimal neighbor cell, with Gaussian noise."""
    cell = env.state_cell(state)
    if cell == tuple(goal_cell):
        target = maze.cell_center(goal_cell)
    else:
        best, best_d = cell, goal_dists[cell]
        r, c = cell
        for nxt in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if maze.is_free_cell(nxt) and goal_dists[nxt] < best_d:
                best, best_d = nxt, goal_dists[nxt]
        target = maze.cell_center(best)
    delta = target - np.asarray(state, dtype=np.float64)
    norm = np.linalg.norm(delta)
    direction = delta / norm if norm > 1e-9 else np.zeros(2)
    action = env.a_max * direction + noise * env.a_max * rng.standard_normal(2)
    return env.clip_action(action).astype(np.float32)


def _rollout_to_goal(env, maze, start_state, goal_cell, rng, max_steps: int,
                     eps: float, noise: float, dist_cache: dict | None = None):
    """Noisy expert rollout; stops on goal proximity or the step cap."""
    pred = SuccessPredicate(epsilon=eps)
    goal_state = env.cell_state(goal_cell)
    goal_cell = tuple(goal_cell)
    if dist_cache is None:
        goal_dists = bfs_distances(maze, goal_cell)
    else:
        goal_dists = dist_cache.get(goal_cell)
        if goal_dists is None:
            goal_dists = dist_cache[goal_cell] = bfs_distances(maze, goal_cell)
    obs = [np.asarray(start_state, dtype=np.float32)]
    acts = []
    state = start_state
    for _ in range(max_steps):
        a = _expert_action(env, maze, state, goal_cell, goal_dists, rng, noise)
        state = env.step(state, a)
        obs.append(np.asarray(state, dtype=np.float32))
        acts.append(a)
        if reward(state, goal_state, pred):
            break
    return np.stack(obs), np.stack(acts)


def _random_free_cell(maze: MazeSpec, rng) -> tuple[int, int]:
    free = maze.free_cells()
    return free[int(rng.integers(len(free)))]


def _goal_pool(maze: MazeSpec, dists: np.ndarray, lo: int, hi: int) -> list:
    """Reachable goal cells with BFS distance in [lo, hi]; the lower bound is
    relaxed first and then the upper raised, so small mazes stay feasible."""
    free = maze.free_cells()
    reachable = [(c, dists[c]) for c in free if np.isfinite(dists[c]) and dists[c] >= 1]
    if not reachable:
        return []
    max_d = max(d for _, d in reachable)
    lo = min(lo, int(max_d))
    pool = [c for c, d in reachable if lo <= d <= hi]
    return pool or [c for c, d in reachable if d <= hi] or [c for c, _ in reachable]


def _start_state(env, cell, rng):
    state = env.cell_state(cell)
    if not isinstance(env, Gridworld):
        state = state + (rng.uniform(-0.3, 0.3, size=2) * env.maze.cell_size).astype(np.float32)
    return state


def generate_dataset(
    env,
    style: str,
    n_transitions: int,
    seed: int,
    *,
    max_segment_steps: int = 40,
    segment_cell_radius: int = 12,
    min_segment_cells: int = 6,
    min_navigate_cells: int = 5,
    explore_episode_len: int = 100,
    resample_every: int = RESAMPLE_EVERY,
    success_eps: float = 0.5,
) -> Dataset:
    if n_transitions <= 0:
        raise ValueError("n_transitions must be positive")
    maze = env.maze
    rng = np.random.default_rng(seed)
    trajectories: list[Trajectory] = []
    total = 0
    dist_cache: dict = {}

    def cached_dists(cell):
        cell = tuple(cell)
        if cell not in dist_cache:
            dist_cache[cell] = bfs_distances(maze, cell)
        return dist_cache[cell]

    while total < n_transitions:
        if style == "navigate":
            start = _random_free_cell(maze, rng)
            dists = cached_dists(start)
            pool = _goal_pool(maze, dists, min_navigate_cells, maze.rows * maze.cols)
            if not pool:
                continue  # isolated start cell
            goal = pool[int(rng.integers(len(pool)))]
            cap = int(4 * dists[goal]) + 20
            obs, acts = _rollout_to_goal(env, maze, _start_state(env, start, rng), goal,
                                         rng, cap, success_eps, EXPERT_NOISE, dist_cache)
        elif style == "stitch":
            start = _random_free_cell(maze, rng)
            dists = cached_dists(start)
            pool = _goal_pool(maze, dists, min_segment_cells, segment_cell_radius)
            if not pool:
                continue
            goal = pool[int(rng.integers(len(pool)))]
            obs, acts = _rollout_to_goal(env, maze, _start_state(env, start, rng), goal,
                                         rng, max_segment_steps, success_eps, EXPERT_NOISE, dist_cache)
        elif style == "explore":
            start = _random_free_cell(maze, rng)
            state = _start_state(env, start, rng)
            dirs = explore_directions(explore_episode_len, rng, resample_every)
            obs_list = [np.asarray(state, dtype=np.float32)]
            act_list = []
            for t in range(explore_episode_len):
                a = env.a_max * EXPLORE_DRIFT * dirs[t] + EXPLORE_NOISE * env.a_max * rng.standard_normal(2)
                a = env.clip_action(a).astype(np.float32)
                state = env.step(state, a)
                obs_list.append(np.asarray(state, dtype=np.float32))
                act_list.append(a)
            obs, acts = np.stack(obs_list), np.stack(act_list)
        else:
            raise ValueError(f"unknown dataset style {style!r}")

        trajectories.append(Trajectory(obs, acts))
        total += acts.shape[0]

    return Dataset(trajectories, style=style, seed=seed)
