"""Directional low-level agent.

The agent is conditioned on a unit direction in the embedding space rather
than on a raw goal state. Rewards are the inner product of the latent
displacement with that direction, the critic/value pair follows the
expectile-regression recipe for offline data, and the actor maximizes the
critic's score of its own action plus a behavior-cloning log-likelihood.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from gas import nn
from gas.dataset import Dataset, step_subgoal_state_indices, td_subgoal_state_indices
from gas.tdr import TdrModel, TrainingDiverged, embed_dataset, expectile_loss

_MAGIC = b"GASAGT01"

MIN_DIRECTION_NORM = 1e-8

SUBGOAL_STRATEGIES = ("td", "step", "random")


@dataclass
class AgentConfig:
    hidden: tuple[int, ...] = (64, 64, 64)
    expectile: float = 0.7
    gamma: float = 0.99
    alpha: float = 1.0
    lr: float = 3e-4
    target_tau: float = 0.005
    log_std: float = -1.0
    steps: int = 50_000
    batch: int = 256
    seed: int = 0
    h_td: float = 8.0
    subgoal: str = "td"          # td | step | random
    step_c: int | None = None    # step-based horizon; defaults to round(h_td)
    log_every: int = 200


@dataclass
class AgentModel:
    critic: nn.Mlp         # (state, action, direction) -> scalar
    critic_target: nn.Mlp
    value: nn.Mlp          # (state, direction) -> scalar
    actor: nn.Mlp          # (state, direction) -> action mean
    state_dim: int
    action_dim: int
    latent_dim: int
    log_std: float
    expectile: float
    gamma: float
    alpha: float
    a_max: float


def init_agent(state_dim: int, action_dim: int, latent_dim: int, cfg: AgentConfig,
               rng: np.random.Generator, a_max: float = 1.0) -> AgentModel:
    critic = nn.init_mlp((state_dim + action_dim + latent_dim, *cfg.hidden, 1), rng)
    value = nn.init_mlp((state_dim + latent_dim, *cfg.hidden, 1), rng)
    actor = nn.init_mlp((state_dim + latent_dim, *cfg.hidden, action_dim), rng)
    return AgentModel(
        critic=critic,
        critic_target=critic.copy(),
        value=value,
        actor=actor,
        state_dim=state_dim,
        action_dim=action_dim,
        latent_dim=latent_dim,
        log_std=cfg.log_std,
        expectile=cfg.expectile,
        gamma=cfg.gamma,
        alpha=cfg.alpha,
        a_max=a_max,
    )


# --- directions ---------------------------------------------------------------


def sample_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    return sample_directions(rng, 1, dim)[0]

def sample_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Uniform points on the unit sphere via normalized Gaussians."""
    out = np.empty((n, dim))
    todo = np.arange(n)
    while todo.size:
        draw = rng.standard_normal((todo.size, dim))
        norms = np.linalg.norm(draw, axis=1)
        ok = norms >= MIN_DIRECTION_NORM
        out[todo[ok]] = draw[ok] / norms[ok, None]
        todo = todo[~ok]
    return out


def intrinsic_reward(tdr_model: TdrModel, s: np.ndarray, s_next: np.ndarray,
                     h_dir: np.ndarray) -> float | np.ndarray:
    """Inner product of the latent displacement with the direction."""
    disp = np.asarray(tdr_model.embed(s_next), dtype=np.float64) - np.asarray(
        tdr_model.embed(s), dtype=np.float64
    )
    return disp @ np.asarray(h_dir, dtype=np.float64) if disp.ndim == 1 else np.einsum(
        "ij,ij->i", disp, np.asarray(h_dir, dtype=np.float64)
    )


def direction_to_subgoal(tdr_model: TdrModel, s: np.ndarray, s_sub: np.ndarray) -> np.ndarray:
    """Unit latent direction from the current state toward the subgoal."""
    disp = np.asarray(tdr_model.embed(s_sub), dtype=np.float64) - np.asarray(
        tdr_model.embed(s), dtype=np.float64
    )
    norm = np.linalg.norm(disp)
    if norm < MIN_DIRECTION_NORM:
        raise ValueError("zero latent displacement: direction undefined")
    return disp / norm


def directions_from_latents(h_from: np.ndarray, h_to: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched unit directions plus a validity mask for degenerate rows."""
    disp = np.asarray(h_to, dtype=np.float64) - np.asarray(h_from, dtype=np.float64)
    norms = np.linalg.norm(disp, axis=1)
    ok = norms >= MIN_DIRECTION_NORM
    dirs = np.zeros_like(disp)
    dirs[ok] = disp[ok] / norms[ok, None]
    return dirs, ok


# --- losses and steps ------------------------------------------------------------


def critic_losses(model: AgentModel, batch) -> tuple[float, float]:
    """Pure evaluation of the squared critic loss and expectile value loss."""
    s, a, s_next, h_dir, rew = batch
    q = nn.forward(model.critic, _sa_dir(s, a, h_dir))[:, 0]
    v_next = nn.forward(model.value, _s_dir(s_next, h_dir))[:, 0]
    target = rew + model.gamma * v_next
    loss_q = float(np.mean((q - target) ** 2))
    q_t = nn.forward(model.critic_target, _sa_dir(s, a, h_dir))[:, 0]
    v = nn.forward(model.value, _s_dir(s, h_dir))[:, 0]
    loss_v = float(np.mean(expectile_loss(q_t - v, model.expectile)))
    return loss_q, loss_v


def _sa_dir(s, a, h):
    return np.concatenate([s, a, h], axis=1)


def _s_dir(s, h):
    return np.concatenate([s, h], axis=1)


def critic_grads(model: AgentModel, batch):
    """Gradients for the critic (toward reward + discounted value of the next
    state) and for the value net (expectile regression toward the target
    critic). Neither target side carries gradient."""
    s, a, s_next, h_dir, rew = batch
    b = s.shape[0]
    dtype = model.critic.weights[0].dtype

    v_next = nn.forward(model.value, _s_dir(s_next, h_dir))[:, 0]
    target = rew + model.gamma * v_next
    q, cache_q = nn.forward_cached(model.critic, _sa_dir(s, a, h_dir).astype(dtype))
    q = q[:, 0]
    loss_q = float(np.mean((q - target) ** 2))
    up_q = (2.0 * (q - target) / b)[:, None].astype(dtype)
    grads_q, _ = nn.backward(model.critic, cache_q, up_q)

    q_t = nn.forward(model.critic_target, _sa_dir(s, a, h_dir))[:, 0]
    v, cache_v = nn.forward_cached(model.value, _s_dir(s, h_dir).astype(dtype))
    v = v[:, 0]
    delta = q_t - v
    loss_v = float(np.mean(expectile_loss(delta, model.expectile)))
    weight = np.abs(model.expectile - (delta < 0))
    up_v = (-2.0 * weight * delta / b)[:, None].astype(dtype)
    grads_v, _ = nn.backward(model.value, cache_v, up_v)
    return loss_q, loss_v, grads_q, grads_v


def critic_step(model: AgentModel, opt_q: nn.AdamState, opt_v: nn.AdamState,
                batch, target_tau: float) -> tuple[float, float]:
    loss_q, loss_v, grads_q, grads_v = critic_grads(model, batch)
    if not (np.isfinite(loss_q) and np.isfinite(loss_v)):
        raise TrainingDiverged("non-finite critic loss")
    nn.adam_step(model.critic, grads_q, opt_q)
    nn.adam_step(model.value, grads_v, opt_v)
    nn.polyak_update(model.critic_target, model.critic, target_tau)
    return loss_q, loss_v


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: float) -> np.ndarray:
    """Per-sample log density under an isotropic fixed-std Gaussian."""
    var = np.exp(2.0 * log_std)
    diff = actions - mean
    dim = actions.shape[1]
    return -0.5 * (diff * diff).sum(axis=1) / var - dim * (log_std + 0.5 * np.log(2.0 * np.pi))


def actor_loss(model: AgentModel, s: np.ndarray, a: np.ndarray, h_dir: np.ndarray) -> float:
    """Pure evaluation of the policy-extraction objective (negated for
    minimization): critic score of the actor's mean action plus the
    alpha-weighted cloning log-likelihood."""
    mu = nn.forward(model.actor, _s_dir(s, h_dir))
    q = nn.forward(model.critic, _sa_dir(s, mu, h_dir))[:, 0]
    logp = gaussian_log_prob(a, mu, model.log_std)
    return float(-np.mean(q + model.alpha * logp))


def actor_grads(model: AgentModel, s, a, h_dir):
    """Deterministic-policy gradient through the (frozen) critic plus the
    cloning term, both on the same samples."""
    b = s.shape[0]
    dtype = model.actor.weights[0].dtype
    mu, cache_pi = nn.forward_cached(model.actor, _s_dir(s, h_dir).astype(dtype))
    q, cache_q = nn.forward_cached(model.critic, _sa_dir(s, mu, h_dir).astype(dtype))
    q = q[:, 0]
    logp = gaussian_log_prob(a, mu, model.log_std)
    loss = float(-np.mean(q + model.alpha * logp))

    up_q = np.full((b, 1), -1.0 / b, dtype=dtype)
    dx = nn.backward_input_only(model.critic, cache_q, up_q)
    state_dim = s.shape[1]
    d_mu_q = dx[:, state_dim : state_dim + model.actor.out_dim]
    var = np.exp(2.0 * model.log_std)
    d_mu_bc = (model.alpha * (mu - a) / var / b).astype(dtype)
    grads_pi, _ = nn.backward(model.actor, cache_pi, (d_mu_q + d_mu_bc).astype(dtype))
    return loss, grads_pi


def actor_step(model: AgentModel, opt_pi: nn.AdamState, s, a, h_dir) -> float:
    loss, grads = actor_grads(model, s, a, h_dir)
    if not np.isfinite(loss):
        raise TrainingDiverged("non-finite actor loss")
    nn.adam_step(model.actor, grads, opt_pi)
    return loss


def act(model: AgentModel, state: np.ndarray, h_dir: np.ndarray,
        deterministic: bool = True, rng: np.random.Generator | None = None) -> np.ndarray:
    """Policy action clipped to the action bounds."""
    x = np.concatenate([np.asarray(state, dtype=np.float32), np.asarray(h_dir, dtype=np.float32)])
    mu = nn.forward(model.actor, x)
    if not deterministic:
        if rng is None:
            raise ValueError("stochastic action sampling needs an rng")
        mu = mu + np.exp(model.log_std) * rng.standard_normal(mu.shape)
    return np.clip(mu, -model.a_max, model.a_max).astype(np.float32)


# --- training loop ----------------------------------------------------------------


def train_agent(
    data: Dataset,
    tdr_model: TdrModel,
    cfg: AgentConfig,
    a_max: float = 1.0,
) -> tuple[AgentModel, list[tuple[int, float, float, float]]]:
    """Interleaved critic and actor updates; the embedding is frozen, so all
    state latents and subgoal targets are precomputed once."""
    if cfg.subgoal not in SUBGOAL_STRATEGIES:
        raise ValueError(f"unknown subgoal strategy {cfg.subgoal!r}")
    rng = np.random.default_rng(cfg.seed)
    model = init_agent(data.state_dim, data.action_dim, tdr_model.latent_dim, cfg, rng, a_max)
    opt_q = nn.init_adam(model.critic, lr=cfg.lr)
    opt_v = nn.init_adam(model.value, lr=cfg.lr)
    opt_pi = nn.init_adam(model.actor, lr=cfg.lr)

    idx = data.index()
    latents = embed_dataset(data, tdr_model).astype(np.float64)
    anchor_flat = idx["state_offset"][idx["tr_traj"]] + idx["tr_step"]
    if cfg.subgoal == "td":
        subgoal_flat = td_subgoal_state_indices(data, tdr_model, cfg.h_td)
    elif cfg.subgoal == "step":
        c = cfg.step_c if cfg.step_c is not None else int(round(cfg.h_td))
        subgoal_flat = step_subgoal_state_indices(data, c)
    else:
        subgoal_flat = None

    obs = idx["observations"]
    acts = idx["actions"]
    dim = tdr_model.latent_dim
    history: list[tuple[int, float, float, float]] = []
    for step in range(cfg.steps):
        picks = rng.integers(data.n_transitions, size=cfg.batch)
        s = obs[anchor_flat[picks]]
        a = acts[picks]
        s_next = obs[anchor_flat[picks] + 1]

        # value learning uses fresh random directions
        dirs_q = sample_directions(rng, cfg.batch, dim)
        rew = np.einsum("ij,ij->i", latents[anchor_flat[picks] + 1] - latents[anchor_flat[picks]], dirs_q)
        loss_q, loss_v = critic_step(model, opt_q, opt_v, (s, a, s_next, dirs_q, rew), cfg.target_tau)

        # policy extraction uses subgoal-derived directions
        if subgoal_flat is None:
            dirs_pi, ok = sample_directions(rng, cfg.batch, dim), np.ones(cfg.batch, dtype=bool)
        else:
            dirs_pi, ok = directions_from_latents(
                latents[anchor_flat[picks]], latents[subgoal_flat[picks]]
            )
        loss_pi = np.nan
        if ok.any():
            loss_pi = actor_step(model, opt_pi, s[ok], a[ok], dirs_pi[ok])

        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            history.append((step, loss_q, loss_v, loss_pi))
    return model, history


# --- persistence -------------------------------------------------------------------


def save_agent(path, model: AgentModel) -> None:
    meta = {
        "version": 1,
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        "latent_dim": model.latent_dim,
        "log_std": model.log_std,
        "expectile": model.expectile,
        "gamma": model.gamma,
        "alpha": model.alpha,
        "a_max": model.a_max,
    }
    payload = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for net in (model.critic, model.critic_target, model.value, model.actor):
            nn.write_mlp(f, net)


def load_agent(path) -> AgentModel:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("bad agent checkpoint magic")
        (n,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(n).decode("utf-8"))
        critic, _ = nn.read_mlp(f)
        critic_target, _ = nn.read_mlp(f)
        value, _ = nn.read_mlp(f)
        actor, _ = nn.read_mlp(f)
    return AgentModel(
        critic=critic,
        critic_target=critic_target,
        value=value,
        actor=actor,
        state_dim=meta["state_dim"],
        action_dim=meta["action_dim"],
        latent_dim=meta["latent_dim"],
        log_std=meta["log_std"],
        expectile=meta["expectile"],
        gamma=meta["gamma"],
        alpha=meta["alpha"],
        a_max=meta["a_max"],
    )
