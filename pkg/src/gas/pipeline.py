"""Staged pipeline runner with content-hash caching, plus the ablation harness.

Each stage's key hashes the package version, the stage-relevant config
subset, and the content hashes of its input artifacts; a stage reruns only
when that key changes. Artifacts live under the run's output directory and
are mirrored into the cache, so a rerun with an unchanged config performs
no training at all.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
import shutil
from dataclasses import dataclass

import numpy as np

import gas
from gas import agent as agent_mod
from gas import datagen, graph, maze, planner, tdr
from gas import dataset as dataset_mod
from gas.config import RunConfig, config_section_dict

CACHE_ENV_VAR = "GAS_CACHE_DIR"

ABLATE_AXES = ("te-thresh", "h-td", "node-method", "subgoal-sampling")

ABLATE_COLUMNS = ["axis", "value", "retained_pct", "node_count", "return_mean", "return_std"]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_key(name: str, payload: dict) -> str:
    canon = json.dumps({"stage": name, "payload": payload}, sort_keys=True, default=str)
    return hash_bytes(canon.encode("utf-8"))


def resolve_cache_dir(cache_dir: str | None, out_dir: str) -> str:
    if cache_dir:
        return cache_dir
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return env
    return os.path.join(out_dir, ".cache")


@dataclass
class _Stage:
    name: str
    key: str
    artifacts: list[str]


class _Runner:
    def __init__(self, out_dir: str, cache_dir: str, force: bool, log):
        self.out_dir = out_dir
        self.cache_dir = cache_dir
        self.force = force
        self.log = log or (lambda msg: None)
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(cache_dir, exist_ok=True)
        self.manifest: dict = {
            "version": 1,
            "package_version": gas.__version__,
            "stages": {},
        }

    def run_stage(self, name: str, key: str, artifacts: list[str], build) -> dict:
        """Copy from cache when the key matches, otherwise call `build` to
        write the artifacts into out_dir and mirror them into the cache."""
        slot = os.path.join(self.cache_dir, name, key[:24])
        out_paths = [os.path.join(self.out_dir, a) for a in artifacts]
        hit = (not self.force) and all(
            os.path.exists(os.path.join(slot, a)) for a in artifacts
        )
        try:
            if hit:
                for a, dst in zip(artifacts, out_paths):
                    shutil.copyfile(os.path.join(slot, a), dst)
                self.log(f"[{name}] cache hit ({key[:12]})")
            else:
                self.log(f"[{name}] running ({key[:12]})")
                build(out_paths)
                os.makedirs(slot, exist_ok=True)
                for a, src in zip(artifacts, out_paths):
                    shutil.copyfile(src, os.path.join(slot, a))
        except Exception as e:
            raise StageError(name, e) from e
        record = {
            "key": key,
            "cache_hit": bool(hit),
            "artifacts": {a: hash_file(p) for a, p in zip(artifacts, out_paths)},
        }
        self.manifest["stages"][name] = record
        return record


def _resolve_env(cfg: RunConfig):
    spec = maze.resolve_maze(cfg.maze)
    return maze.make_env(spec, cfg.env, a_max=cfg.a_max), spec


def _maze_fingerprint(cfg: RunConfig) -> str:
    spec = maze.resolve_maze(cfg.maze)
    return hash_bytes(maze.maze_to_text(spec).encode("utf-8"))


def write_loss_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def eval_goal_states(env, spec, n_goals: int) -> list[np.ndarray]:
    """Deterministic goal list: cycle through the maze's goal candidates."""
    cells = spec.goal_cells or tuple(spec.free_cells())
    return [env.cell_state(cells[i % len(cells)]) for i in range(n_goals)]


def run_pipeline(cfg: RunConfig, cache_dir: str | None = None, force: bool = False,
                 log=None, node_count: int | None = None) -> dict:
    cfg.validate()
    runner = _Runner(cfg.out_dir, resolve_cache_dir(cache_dir, cfg.out_dir), force, log)
    env, spec = _resolve_env(cfg)
    code = gas.__version__

    data_key = stage_key("data", {
        "code": code,
        "maze": _maze_fingerprint(cfg),
        **config_section_dict(cfg, "data"),
        "a_max": cfg.a_max,
    })

    def build_data(paths):
        data = datagen.generate_dataset(env, cfg.style, cfg.n_transitions, cfg.data_seed)
        dataset_mod.save_dataset(paths[0], data)

    rec_data = runner.run_stage("data", data_key, ["dataset.bin"], build_data)
    data_hash = rec_data["artifacts"]["dataset.bin"]

    tdr_key = stage_key("tdr", {
        "code": code,
        "data": data_hash,
        **config_section_dict(cfg, "tdr"),
    })

    def build_tdr(paths):
        data = dataset_mod.load_dataset(os.path.join(cfg.out_dir, "dataset.bin"))
        model, history = tdr.train_tdr(data, tdr.TdrConfig(
            latent_dim=cfg.latent_dim, hidden=cfg.tdr_hidden, expectile=cfg.tdr_expectile,
            gamma=cfg.tdr_gamma, lr=cfg.tdr_lr, steps=cfg.tdr_steps, batch=cfg.tdr_batch,
            seed=cfg.tdr_seed,
        ))
        tdr.save_tdr(paths[0], model)
        write_loss_csv(paths[1], ["step", "loss"], history)

    rec_tdr = runner.run_stage("tdr", tdr_key, ["tdr.ckpt", "tdr_loss.csv"], build_tdr)
    tdr_hash = rec_tdr["artifacts"]["tdr.ckpt"]

    graph_key = stage_key("graph", {
        "code": code,
        "data": data_hash,
        "tdr": tdr_hash,
        "node_count": node_count,
        **config_section_dict(cfg, "graph"),
    })

    def build_graph_stage(paths):
        data = dataset_mod.load_dataset(os.path.join(cfg.out_dir, "dataset.bin"))
        model = tdr.load_tdr(os.path.join(cfg.out_dir, "tdr.ckpt"))
        g = graph.build_graph(
            data, model, h_td=cfg.h_td, te_thresh=cfg.te_thresh,
            node_method=cfg.node_method, node_count=node_count,
            kmeans_iters=cfg.kmeans_iters, seed=cfg.graph_seed,
        )
        graph.save_graph(paths[0], g)

    rec_graph = runner.run_stage("graph", graph_key, ["graph.json"], build_graph_stage)
    graph_hash = rec_graph["artifacts"]["graph.json"]

    policy_key = stage_key("policy", {
        "code": code,
        "data": data_hash,
        "tdr": tdr_hash,
        "h_td": cfg.h_td,
        **config_section_dict(cfg, "agent"),
    })

    def build_policy(paths):
        data = dataset_mod.load_dataset(os.path.join(cfg.out_dir, "dataset.bin"))
        model = tdr.load_tdr(os.path.join(cfg.out_dir, "tdr.ckpt"))
        pol, history = agent_mod.train_agent(data, model, agent_mod.AgentConfig(
            hidden=cfg.agent_hidden, expectile=cfg.agent_expectile, gamma=cfg.agent_gamma,
            alpha=cfg.alpha, lr=cfg.agent_lr, steps=cfg.agent_steps, batch=cfg.agent_batch,
            seed=cfg.agent_seed, h_td=cfg.h_td, subgoal=cfg.subgoal_sampling, step_c=cfg.step_c,
        ), a_max=cfg.a_max)
        agent_mod.save_agent(paths[0], pol)
        write_loss_csv(paths[1], ["step", "critic_loss", "value_loss", "actor_loss"], history)

    rec_policy = runner.run_stage(
        "policy", policy_key, ["policy.ckpt", "policy_loss.csv"], build_policy
    )
    policy_hash = rec_policy["artifacts"]["policy.ckpt"]

    eval_key = stage_key("eval", {
        "code": code,
        "data": data_hash,
        "tdr": tdr_hash,
        "graph": graph_hash,
        "policy": policy_hash,
        **config_section_dict(cfg, "eval"),
    })

    def build_eval(paths):
        model = tdr.load_tdr(os.path.join(cfg.out_dir, "tdr.ckpt"))
        g = graph.load_graph(os.path.join(cfg.out_dir, "graph.json"))
        pol = agent_mod.load_agent(os.path.join(cfg.out_dir, "policy.ckpt"))
        goals = eval_goal_states(env, spec, cfg.eval_goals)
        rows = planner.evaluate(
            env, model, pol, g, goals, cfg.rollouts, list(cfg.eval_seeds), cfg.h_td,
            max_steps=cfg.max_steps, epsilon=cfg.epsilon, stochastic=cfg.stochastic,
        )
        planner.write_eval_csv(rows, paths[0])

    runner.run_stage("eval", eval_key, ["eval.csv"], build_eval)

    manifest_path = os.path.join(cfg.out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(runner.manifest, f, sort_keys=True, indent=1)
        f.write("\n")
    runner.manifest["manifest_path"] = manifest_path
    return runner.manifest


def _per_seed_returns(rows: list[dict]) -> list[float]:
    seeds = sorted({r["seed"] for r in rows})
    return [
        planner.normalized_return([r for r in rows if r["seed"] == s]) for s in seeds
    ]


def _apply_axis(cfg: RunConfig, axis: str, value: str) -> RunConfig:
    out = copy.deepcopy(cfg)
    if axis == "te-thresh":
        out.te_thresh = None if value.lower() == "none" else float(value)
    elif axis == "h-td":
        out.h_td = float(value)
    elif axis == "node-method":
        out.node_method = value
    elif axis == "subgoal-sampling":
        out.subgoal_sampling = value
    else:
        raise ValueError(f"unknown ablation axis {axis!r}; have {ABLATE_AXES}")
    out.validate()
    return out


def ablate(cfg: RunConfig, axis: str, values: list[str], cache_dir: str | None = None,
           log=None) -> list[dict]:
    """Sweep one axis, reusing cached upstream stages, and report the
    Fig.-style comparison columns per value."""
    if not values:
        raise ValueError("ablation needs at least one value")
    base_out = cfg.out_dir
    cache = resolve_cache_dir(cache_dir, base_out)
    results = []
    base_nodes = None
    if axis == "node-method":
        # matched node counts: run the clustering variant first
        base_cfg = copy.deepcopy(cfg)
        base_cfg.node_method = "gas"
        base_cfg.out_dir = os.path.join(base_out, "ablate-node-method-gas")
        run_pipeline(base_cfg, cache_dir=cache, log=log)
        g = graph.load_graph(os.path.join(base_cfg.out_dir, "graph.json"))
        base_nodes = g.n_nodes

    for value in values:
        variant = _apply_axis(cfg, axis, value)
        variant.out_dir = os.path.join(base_out, f"ablate-{axis}-{value}")
        pinned = base_nodes if variant.node_method in ("fps", "kmeans") else None
        run_pipeline(variant, cache_dir=cache, log=log, node_count=pinned)
        g = graph.load_graph(os.path.join(variant.out_dir, "graph.json"))
        rows = planner.read_eval_csv(os.path.join(variant.out_dir, "eval.csv"))
        per_seed = _per_seed_returns(rows)
        results.append({
            "axis": axis,
            "value": value,
            "retained_pct": 100.0 * g.meta["n_filtered"] / g.meta["n_states"],
            "node_count": g.n_nodes,
            "return_mean": float(np.mean(per_seed)),
            "return_std": float(np.std(per_seed)),
        })
    return results


def write_ablate_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=ABLATE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in ABLATE_COLUMNS})
