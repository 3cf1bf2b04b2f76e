"""Temporal-distance representation learning.

Trains an embedding so that Euclidean distance in latent space approximates
the minimum number of environment steps between states. The embedding is
fit as a goal-conditioned value function V(s, g) = -||embed(s) - embed(g)||
with an expectile temporal-difference objective against a slowly-updated
target copy.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from gas import nn
from gas.dataset import Dataset, RelabelConfig, sample_tdr_batch

_MAGIC = b"GASTDR01"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TdrConfig:
    latent_dim: int = 32
    hidden: tuple[int, ...] = (64, 64, 64)
    expectile: float = 0.99
    gamma: float = 0.99
    lr: float = 3e-4
    target_tau: float = 0.005
    steps: int = 50_000
    batch: int = 256
    seed: int = 0
    p_future: float = 0.625
    p_geometric: float | None = None  # None: discount-matched, 1 - gamma
    log_every: int = 200

    def relabel(self) -> RelabelConfig:
        return RelabelConfig(
            p_future=self.p_future,
            p_uniform=1.0 - self.p_future,
            p_geometric=self.p_geometric if self.p_geometric is not None else 1.0 - self.gamma,
        )


@dataclass
class TdrModel:
    net: nn.Mlp
    target: nn.Mlp
    expectile: float
    gamma: float

    @property
    def latent_dim(self) -> int:
        return self.net.out_dim

    @property
    def state_dim(self) -> int:
        return self.net.in_dim

    def embed(self, states: np.ndarray) -> np.ndarray:
        """Deterministic latent coordinates; distances are in step units."""
        return nn.forward(self.net, np.asarray(states, dtype=self.net.weights[0].dtype))

    def value(self, s: np.ndarray, g: np.ndarray) -> float | np.ndarray:
        """-||embed(s) - embed(g)||; 0 iff the embeddings coincide."""
        hs = self.embed(s)
        hg = self.embed(g)
        return -np.linalg.norm(hs - hg, axis=-1)


def init_tdr(state_dim: int, cfg: TdrConfig, rng: np.random.Generator) -> TdrModel:
    widths = (state_dim, *cfg.hidden, cfg.latent_dim)
    net = nn.init_mlp(widths, rng, layer_norm=True)
    return TdrModel(net=net, target=net.copy(), expectile=cfg.expectile, gamma=cfg.gamma)


def expectile_loss(x: np.ndarray, tau: float) -> np.ndarray:
    """Asymmetric squared loss |tau - 1{x<0}| * x^2."""
    x = np.asarray(x)
    return np.abs(tau - (x < 0)) * x * x


def _pair_values(net: nn.Mlp, a: np.ndarray, b: np.ndarray, cached: bool):
    """V(a, b) batched through one stacked forward pass."""
    stacked = np.concatenate([a, b]).astype(net.weights[0].dtype)
    if cached:
        h, cache = nn.forward_cached(net, stacked)
    else:
        h, cache = nn.forward(net, stacked), None
    n = a.shape[0]
    diff = h[:n] - h[n:]
    dist = np.linalg.norm(diff, axis=1)
    return -dist, diff, dist, cache


def tdr_loss(model: TdrModel, batch) -> float:
    """Mean expectile loss of the TD error; pure evaluation path."""
    s, s_next, g = batch
    v, _, _, _ = _pair_values(model.net, s, g, cached=False)
    v_t, _, _, _ = _pair_values(model.target, s_next, g, cached=False)
    rew = -(np.any(s != g, axis=1)).astype(np.float64)
    delta = rew + model.gamma * v_t - v
    return float(np.mean(expectile_loss(delta, model.expectile)))


def tdr_td_error_grads(model: TdrModel, batch):
    """Loss and parameter gradients of the online net. The target side is
    held fixed; gradients flow through both embeddings of the online pair."""
    s, s_next, g = batch
    v, diff, dist, cache = _pair_values(model.net, s, g, cached=True)
    v_t, _, _, _ = _pair_values(model.target, s_next, g, cached=False)
    rew = -(np.any(s != g, axis=1)).astype(np.float64)
    delta = rew + model.gamma * v_t - v
    loss = float(np.mean(expectile_loss(delta, model.expectile)))

    b = s.shape[0]
    weight = np.abs(model.expectile - (delta < 0))
    dloss_ddelta = 2.0 * weight * delta / b
    safe = np.maximum(dist, 1e-12)
    unit = diff / safe[:, None]
    # delta depends on v = -dist with d(dist)/d(h_s) = unit, d(dist)/d(h_g) = -unit,
    # so dL/d(h_s) = dL/d(delta) * unit and dL/d(h_g) is its negation
    d_hs = dloss_ddelta[:, None] * unit
    d_hg = -d_hs
    upstream = np.concatenate([d_hs, d_hg]).astype(model.net.weights[0].dtype)
    grads, _ = nn.backward(model.net, cache, upstream)
    return loss, grads


def tdr_train_step(model: TdrModel, opt: nn.AdamState, batch, target_tau: float) -> float:
    loss, grads = tdr_td_error_grads(model, batch)
    if not np.isfinite(loss):
        raise TrainingDiverged("non-finite TDR loss")
    nn.adam_step(model.net, grads, opt)
    nn.polyak_update(model.target, model.net, target_tau)
    return loss


def train_tdr(data: Dataset, cfg: TdrConfig) -> tuple[TdrModel, list[tuple[int, float]]]:
    """Run the configured number of gradient steps on relabeled batches."""
    rng = np.random.default_rng(cfg.seed)
    model = init_tdr(data.state_dim, cfg, rng)
    opt = nn.init_adam(model.net, lr=cfg.lr)
    relabel = cfg.relabel()
    history: list[tuple[int, float]] = []
    for step in range(cfg.steps):
        batch = sample_tdr_batch(data, relabel, cfg.batch, rng)
        loss = tdr_train_step(model, opt, batch, cfg.target_tau)
        if loss > 1e6:
            raise TrainingDiverged(f"TDR loss {loss:.3g} at step {step}")
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            history.append((step, loss))
    return model, history


def embed_dataset(data: Dataset, model: TdrModel, chunk: int = 8192) -> np.ndarray:
    """Latents for every state in the dataset's flat order."""
    obs = data.index()["observations"]
    return np.concatenate([model.embed(obs[i : i + chunk]) for i in range(0, obs.shape[0], chunk)])


# --- persistence -------------------------------------------------------------


def save_tdr(path, model: TdrModel) -> None:
    meta = {
        "version": 1,
        "expectile": model.expectile,
        "gamma": model.gamma,
    }
    payload = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        nn.write_mlp(f, model.net)
        nn.write_mlp(f, model.target)


def load_tdr(path) -> TdrModel:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("bad TDR checkpoint magic")
        (n,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(n).decode("utf-8"))
        net, _ = nn.read_mlp(f)
        target, _ = nn.read_mlp(f)
    return TdrModel(net=net, target=target, expectile=meta["expectile"], gamma=meta["gamma"])
