"""Temporal-efficiency scoring and state filtering for graph construction.

A state's score is the cosine between two latent displacements measured in
its own trajectory: the displacement to the first future state at least a
target distance away, and the displacement to the state reached after that
many steps. Straight, efficient progress scores near 1; detours and
backtracking score lower. Only defined where both displacements exist and
are non-degenerate.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

MIN_DISPLACEMENT = 1e-8


def first_reach_indices(embs: np.ndarray, dist: float) -> np.ndarray:
    """For every index t, the smallest k > t with ||embs[k] - embs[t]|| >= dist,
    or -1 when the trajectory never gets that far. One vectorized pass per
    step offset; cost scales with the offset at which states first reach the
    distance, so a full dataset sweep is effectively linear in its size."""
    e = np.asarray(embs, dtype=np.float64)
    n = e.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for w in range(1, n):
        heads = out[: n - w]
        if (heads >= 0).all():
            break
        d = np.linalg.norm(e[w:] - e[: n - w], axis=1)
        hit = np.nonzero((heads < 0) & (d >= dist))[0]
        out[hit] = hit + w
    return out


def optimal_future(embs: np.ndarray, t: int, dist: float) -> int | None:
    """Direct scan form of `first_reach_indices` for a single index."""
    e = np.asarray(embs, dtype=np.float64)
    base = e[t]
    for k in range(t + 1, e.shape[0]):
        if np.linalg.norm(e[k] - base) >= dist:
            return k
    return None


def temporal_efficiency(embs: np.ndarray, t: int, h_td: float) -> float | None:
    """Cosine alignment at one index; None when undefined (no future state at
    the target distance, trajectory too short, or degenerate displacement)."""
    e = np.asarray(embs, dtype=np.float64)
    k = optimal_future(e, t, h_td)
    reached = t + int(round(h_td))
    if k is None or reached > e.shape[0] - 1:
        return None
    v_opt = e[k] - e[t]
    v_reached = e[reached] - e[t]
    n_opt = np.linalg.norm(v_opt)
    n_reached = np.linalg.norm(v_reached)
    if n_opt < MIN_DISPLACEMENT or n_reached < MIN_DISPLACEMENT:
        return None
    return float(np.clip(v_opt @ v_reached / (n_opt * n_reached), -1.0, 1.0))


def trajectory_te_values(embs: np.ndarray, h_td: float) -> np.ndarray:
    """Vectorized scores for a whole trajectory; NaN marks undefined."""
    e = np.asarray(embs, dtype=np.float64)
    n = e.shape[0]
    vals = np.full(n, np.nan)
    reach = first_reach_indices(e, h_td)
    steps_ahead = int(round(h_td))
    t = np.arange(n)
    ok = (reach >= 0) & (t + steps_ahead <= n - 1) & (steps_ahead > 0)
    ti = t[ok]
    if ti.size == 0:
        return vals
    v_opt = e[reach[ok]] - e[ti]
    v_reached = e[ti + steps_ahead] - e[ti]
    n_opt = np.linalg.norm(v_opt, axis=1)
    n_reached = np.linalg.norm(v_reached, axis=1)
    good = (n_opt >= MIN_DISPLACEMENT) & (n_reached >= MIN_DISPLACEMENT)
    cos = np.einsum("ij,ij->i", v_opt[good], v_reached[good]) / (n_opt[good] * n_reached[good])
    vals[ti[good]] = np.clip(cos, -1.0, 1.0)
    return vals


@dataclass
class TeRecord:
    trajectory_id: int
    step_index: int
    te_value: float | None


def dataset_te_records(data, tdr, h_td: float) -> list[TeRecord]:
    records = []
    for i, traj in enumerate(data.trajectories):
        vals = trajectory_te_values(tdr.embed(traj.observations), h_td)
        for t, v in enumerate(vals):
            records.append(TeRecord(i, t, None if np.isnan(v) else float(v)))
    return records


def write_te_csv(records: list[TeRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["trajectory_id", "step_index", "te_value"])
        for r in records:
            w.writerow([r.trajectory_id, r.step_index, "" if r.te_value is None else repr(r.te_value)])


@dataclass
class FilteredStates:
    """States that passed the efficiency filter, in dataset order."""

    latents: np.ndarray       # (M, d)
    traj_ids: np.ndarray      # (M,)
    step_indices: np.ndarray  # (M,)

    def __len__(self) -> int:
        return self.latents.shape[0]


def filter_states(data, tdr, h_td: float, te_thresh: float) -> FilteredStates:
    """Embeddings of states whose defined score is >= `te_thresh`; undefined
    states are excluded. An empty result is legal here and surfaces as an
    error in graph construction."""
    lat, tids, steps = [], [], []
    for i, traj in enumerate(data.trajectories):
        embs = tdr.embed(traj.observations)
        vals = trajectory_te_values(embs, h_td)
        keep = ~np.isnan(vals) & (vals >= te_thresh)
        if keep.any():
            lat.append(np.asarray(embs)[keep])
            tids.append(np.full(int(keep.sum()), i, dtype=np.int64))
            steps.append(np.nonzero(keep)[0].astype(np.int64))
    if not lat:
        d = np.asarray(tdr.embed(data.trajectories[0].observations[:1])).shape[-1]
        return FilteredStates(
            latents=np.empty((0, d), dtype=np.float32),
            traj_ids=np.empty(0, dtype=np.int64),
            step_indices=np.empty(0, dtype=np.int64),
        )
    return FilteredStates(
        latents=np.concatenate(lat),
        traj_ids=np.concatenate(tids),
        step_indices=np.concatenate(steps),
    )


def all_states(data, tdr) -> FilteredStates:
    """Unfiltered counterpart of `filter_states`: every state's embedding."""
    lat = [np.asarray(tdr.embed(t.observations)) for t in data.trajectories]
    tids = [np.full(t.n_steps + 1, i, dtype=np.int64) for i, t in enumerate(data.trajectories)]
    steps = [np.arange(t.n_steps + 1, dtype=np.int64) for t in data.trajectories]
    return FilteredStates(np.concatenate(lat), np.concatenate(tids), np.concatenate(steps))
