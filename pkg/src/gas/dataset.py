"""Trajectory storage, binary/JSONL persistence, and training samplers."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from gas import te

_MAGIC = b"GASDATA1"


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    trajectory_id: int
    step_index: int


@dataclass
class Trajectory:
    observations: np.ndarray  # (T+1, state_dim) float32
    actions: np.ndarray       # (T, action_dim) float32

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        if self.actions.shape[0] < 1:
            raise ValueError("empty trajectory")
        if self.observations.shape[0] != self.actions.shape[0] + 1:
            raise ValueError("observations must have one more row than actions")

    @property
    def n_steps(self) -> int:
        return self.actions.shape[0]


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    style: str = ""
    seed: int = 0
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("dataset has no trajectories")
        self._index = None

    @property
    def state_dim(self) -> int:
        return self.trajectories[0].observations.shape[1]

    @property
    def action_dim(self) -> int:
        return self.trajectories[0].actions.shape[1]

    @property
    def n_transitions(self) -> int:
        return int(self.index()["trans_offset"][-1])

    @property
    def n_states(self) -> int:
        return int(self.index()["state_offset"][-1])

    def index(self) -> dict:
        """Flat lookup tables: per-transition and per-state (traj, step) maps,
        a stacked observation/action matrix, and per-trajectory offsets."""
        if self._index is None:
            tr_traj, tr_step, st_traj, st_step = [], [], [], []
            state_offset = np.zeros(len(self.trajectories) + 1, dtype=np.int64)
            trans_offset = np.zeros(len(self.trajectories) + 1, dtype=np.int64)
            for i, t in enumerate(self.trajectories):
                tr_traj.append(np.full(t.n_steps, i, dtype=np.int64))
                tr_step.append(np.arange(t.n_steps, dtype=np.int64))
                st_traj.append(np.full(t.n_steps + 1, i, dtype=np.int64))
                st_step.append(np.arange(t.n_steps + 1, dtype=np.int64))
                state_offset[i + 1] = state_offset[i] + t.n_steps + 1
                trans_offset[i + 1] = trans_offset[i] + t.n_steps
            self._index = {
                "tr_traj": np.concatenate(tr_traj),
                "tr_step": np.concatenate(tr_step),
                "st_traj": np.concatenate(st_traj),
                "st_step": np.concatenate(st_step),
                "state_offset": state_offset,
                "trans_offset": trans_offset,
                "observations": np.concatenate([t.observations for t in self.trajectories]),
                "actions": np.concatenate([t.actions for t in self.trajectories]),
                "last_step": np.array([t.n_steps for t in self.trajectories], dtype=np.int64),
            }
        return self._index

    def state(self, traj_id: int, step: int) -> np.ndarray:
        return self.trajectories[traj_id].observations[step]

    def transition(self, i: int) -> Transition:
        idx = self.index()
        traj, step = int(idx["tr_traj"][i]), int(idx["tr_step"][i])
        t = self.trajectories[traj]
        return Transition(
            state=t.observations[step],
            action=t.actions[step],
            next_state=t.observations[step + 1],
            trajectory_id=traj,
            step_index=step,
        )


# --- persistence -------------------------------------------------------------


def save_dataset(path, data: Dataset) -> None:
    style = data.style.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IH", 1, len(style)))
        f.write(style)
        f.write(struct.pack("<qIII", data.seed, len(data.trajectories), data.state_dim, data.action_dim))
        for t in data.trajectories:
            f.write(struct.pack("<I", t.n_steps))
            f.write(np.ascontiguousarray(t.observations, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(t.actions, dtype="<f4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("bad dataset magic")
        version, style_len = struct.unpack("<IH", f.read(6))
        if version != 1:
            raise ValueError(f"unsupported dataset version {version}")
        style = f.read(style_len).decode("utf-8")
        seed, n_traj, ds, da = struct.unpack("<qIII", f.read(20))
        trajectories = []
        for _ in range(n_traj):
            (n_steps,) = struct.unpack("<I", f.read(4))
            obs = np.frombuffer(f.read(4 * (n_steps + 1) * ds), dtype="<f4").reshape(n_steps + 1, ds)
            act = np.frombuffer(f.read(4 * n_steps * da), dtype="<f4").reshape(n_steps, da)
            trajectories.append(Trajectory(obs.copy(), act.copy()))
    return Dataset(trajectories, style=style, seed=seed)


def save_dataset_jsonl(path, data: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as f:
        header = {"version": 1, "style": data.style, "seed": data.seed,
                  "n_trajectories": len(data.trajectories)}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for t in data.trajectories:
            rec = {"observations": t.observations.tolist(), "actions": t.actions.tolist()}
            f.write(json.dumps(rec) + "\n")


def load_dataset_jsonl(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        trajectories = [
            Trajectory(np.array(rec["observations"], dtype=np.float32),
                       np.array(rec["actions"], dtype=np.float32))
            for rec in map(json.loads, f)
        ]
    return Dataset(trajectories, style=header["style"], seed=header["seed"])


# --- goal relabeling ---------------------------------------------------------


@dataclass(frozen=True)
class RelabelConfig:
    """Goal mix for embedding training: same-trajectory future states with
    probability `p_future` (geometric offset), otherwise uniform over the
    dataset; the current state itself is never returned as the goal."""

    p_future: float = 0.625
    p_uniform: float = 0.375
    p_geometric: float = 0.01  # 1 - gamma for the matching discount

    def __post_init__(self):
        if abs(self.p_future + self.p_uniform - 1.0) > 1e-9:
            raise ValueError("p_future + p_uniform must equal 1")
        if not (0.0 < self.p_geometric <= 1.0):
            raise ValueError("geometric parameter must lie in (0, 1]")


def sample_tdr_batch(
    data: Dataset,
    cfg: RelabelConfig,
    batch: int,
    rng: np.random.Generator,
    with_meta: bool = False,
):
    """Draw (s, s', g) triples. Anchors are uniform over transitions; future
    goals use a geometric step offset clamped to the trajectory end."""
    idx = data.index()
    anchors = rng.integers(data.n_transitions, size=batch)
    a_traj = idx["tr_traj"][anchors]
    a_step = idx["tr_step"][anchors]
    use_future = rng.random(batch) < cfg.p_future

    last = idx["last_step"][a_traj]
    offsets = rng.geometric(cfg.p_geometric, size=batch)
    g_traj = a_traj.copy()
    g_step = np.minimum(a_step + offsets, last)

    n_uniform = int((~use_future).sum())
    if n_uniform:
        flat = rng.integers(data.n_states, size=n_uniform)
        g_traj[~use_future] = idx["st_traj"][flat]
        g_step[~use_future] = idx["st_step"][flat]
        # uniform draws may hit the anchor state itself; redraw those
        while True:
            clash = (~use_future) & (g_traj == a_traj) & (g_step == a_step)
            if not clash.any():
                break
            flat = rng.integers(data.n_states, size=int(clash.sum()))
            g_traj[clash] = idx["st_traj"][flat]
            g_step[clash] = idx["st_step"][flat]

    off = idx["state_offset"]
    obs = idx["observations"]
    s = obs[off[a_traj] + a_step]
    s_next = obs[off[a_traj] + a_step + 1]
    g = obs[off[g_traj] + g_step]
    if with_meta:
        meta = {
            "anchor_traj": a_traj, "anchor_step": a_step,
            "goal_traj": g_traj, "goal_step": g_step,
            "future_branch": use_future,
        }
        return s, s_next, g, meta
    return s, s_next, g


# --- subgoal sampling --------------------------------------------------------


def sample_subgoal_step(data: Dataset, traj_id: int, t: int, c: int) -> np.ndarray:
    """State a fixed number of steps ahead, clamped to the trajectory end."""
    traj = data.trajectories[traj_id]
    return traj.observations[min(t + c, traj.n_steps)]


def sample_subgoal_td(data: Dataset, traj_id: int, t: int, h_td: float, tdr) -> np.ndarray:
    """First future state whose embedding is at least `h_td` away from the
    current one; falls back to the trajectory's final state."""
    traj = data.trajectories[traj_id]
    embs = tdr.embed(traj.observations)
    k = te.optimal_future(embs, t, h_td)
    return traj.observations[traj.n_steps if k is None else k]


def td_subgoal_state_indices(data: Dataset, tdr, h_td: float) -> np.ndarray:
    """Flat state index of the distance-`h_td` subgoal for every transition,
    with the trajectory-end fallback applied. Embeddings are computed once,
    so this is the fast path for policy training."""
    idx = data.index()
    out = np.empty(data.n_transitions, dtype=np.int64)
    pos = 0
    for i, traj in enumerate(data.trajectories):
        embs = tdr.embed(traj.observations)
        reach = te.first_reach_indices(embs, h_td)
        sub = reach[: traj.n_steps].copy()
        sub[sub < 0] = traj.n_steps
        out[pos : pos + traj.n_steps] = idx["state_offset"][i] + sub
        pos += traj.n_steps
    return out


def step_subgoal_state_indices(data: Dataset, c: int) -> np.ndarray:
    """Flat state index of the c-step-ahead subgoal for every transition."""
    idx = data.index()
    sub = np.minimum(idx["tr_step"] + c, idx["last_step"][idx["tr_traj"]])
    return idx["state_offset"][idx["tr_traj"]] + sub
