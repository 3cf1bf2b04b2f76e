"""Command-line entry point.

Subcommands: gen-data, train-tdr, build-graph, train-policy, eval, run,
ablate, report. Exit codes: 0 success, 1 validation error (bad flags or
config), 2 stage failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from gas import agent as agent_mod
from gas import config as config_mod
from gas import datagen, graph, maze, pipeline, planner, report, tdr
from gas import dataset as dataset_mod
from gas import te as te_mod


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for bad usage, not argparse's 2
        raise CliValidationError(message)


def _int_list(s: str) -> list[int]:
    return [int(p) for p in s.split(",") if p.strip()]


def _optional_float(s: str):
    return None if s.lower() == "none" else float(s)


def build_parser() -> _Parser:
    p = _Parser(prog="gas", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("gen-data", help="generate an offline dataset")
    d.add_argument("--maze", required=True, help="builtin:<name> or path to a maze text file")
    d.add_argument("--env", choices=("point", "grid"), default="point")
    d.add_argument("--style", choices=("navigate", "stitch", "explore"), required=True)
    d.add_argument("--n", type=int, required=True, help="transition count")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--a-max", type=float, default=1.0)
    d.add_argument("--out", required=True)
    d.add_argument("--jsonl", help="also write a JSON-lines copy")

    t = sub.add_parser("train-tdr", help="train the temporal-distance embedding")
    t.add_argument("--data", required=True)
    t.add_argument("--dim", type=int, default=32)
    t.add_argument("--hidden", type=_int_list, default=[64, 64, 64])
    t.add_argument("--expectile", type=float, default=0.99)
    t.add_argument("--gamma", type=float, default=0.99)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--steps", type=int, default=25_000)
    t.add_argument("--batch", type=int, default=256)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--loss-csv")

    g = sub.add_parser("build-graph", help="filter, cluster, and connect the latent graph")
    g.add_argument("--data", required=True)
    g.add_argument("--tdr", required=True)
    g.add_argument("--h-td", type=float, required=True)
    g.add_argument("--te-thresh", type=_optional_float, default=0.9,
                   help="efficiency threshold in [0,1], or 'none' to keep all states")
    g.add_argument("--node-method", choices=("gas", "fps", "kmeans"), default="gas")
    g.add_argument("--node-count", type=int)
    g.add_argument("--kmeans-iters", type=int, default=25)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--per-trajectory", action="store_true",
                   help="no-stitching control: cluster and connect each trajectory separately")
    g.add_argument("--out", required=True)

    a = sub.add_parser("train-policy", help="train the directional low-level policy")
    a.add_argument("--data", required=True)
    a.add_argument("--tdr", required=True)
    a.add_argument("--h-td", type=float, required=True)
    a.add_argument("--hidden", type=_int_list, default=[64, 64, 64])
    a.add_argument("--alpha", type=float, default=1.0)
    a.add_argument("--expectile", type=float, default=0.7)
    a.add_argument("--gamma", type=float, default=0.99)
    a.add_argument("--lr", type=float, default=3e-4)
    a.add_argument("--steps", type=int, default=30_000)
    a.add_argument("--batch", type=int, default=256)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--subgoal", choices=agent_mod.SUBGOAL_STRATEGIES, default="td")
    a.add_argument("--step-c", type=int)
    a.add_argument("--a-max", type=float, default=1.0)
    a.add_argument("--out", required=True)
    a.add_argument("--loss-csv")

    e = sub.add_parser("eval", help="roll out the full planner")
    e.add_argument("--maze", required=True)
    e.add_argument("--env", choices=("point", "grid"), default="point")
    e.add_argument("--tdr", required=True)
    e.add_argument("--graph", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--goals", type=int, default=5)
    e.add_argument("--rollouts", type=int, default=20)
    e.add_argument("--seeds", type=_int_list, default=[0])
    e.add_argument("--max-steps", type=int, help="default: 4x BFS distance, floor 200")
    e.add_argument("--epsilon", type=float, default=0.5)
    e.add_argument("--stochastic", action="store_true")
    e.add_argument("--out", required=True)
    e.add_argument("--te-sweep", help="also dump per-state efficiency records to this CSV")
    e.add_argument("--data", help="dataset path, needed by --te-sweep")

    r = sub.add_parser("run", help="run the staged pipeline from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--cache-dir", help=f"default: ${pipeline.CACHE_ENV_VAR} or <out_dir>/.cache")
    r.add_argument("--force", action="store_true", help="ignore cached stages")

    b = sub.add_parser("ablate", help="sweep one axis, reusing cached stages")
    b.add_argument("--config", required=True)
    b.add_argument("--axis", choices=pipeline.ABLATE_AXES, required=True)
    b.add_argument("--values", required=True, help="comma-separated axis values")
    b.add_argument("--cache-dir")
    b.add_argument("--out", required=True)

    m = sub.add_parser("report", help="aggregate evaluation CSVs into a result table")
    m.add_argument("--entry", action="append", required=True,
                   help="style=S,variant=V,path=P[,nodes=N,retained=F]; repeatable")
    m.add_argument("--out-dir", required=True)

    return p


def _parse_entry(raw: str) -> report.ReportEntry:
    parts = dict(kv.split("=", 1) for kv in raw.split(",") if kv)
    missing = {"style", "variant", "path"} - parts.keys()
    if missing:
        raise CliValidationError(f"--entry missing {sorted(missing)}: {raw!r}")
    return report.ReportEntry(
        style=parts["style"],
        variant=parts["variant"],
        csv_path=parts["path"],
        node_count=int(parts["nodes"]) if "nodes" in parts else None,
        retained_frac=float(parts["retained"]) if "retained" in parts else None,
    )


def _cmd_gen_data(args) -> None:
    spec = maze.resolve_maze(args.maze)
    env = maze.make_env(spec, args.env, a_max=args.a_max)
    data = datagen.generate_dataset(env, args.style, args.n, args.seed)
    dataset_mod.save_dataset(args.out, data)
    if args.jsonl:
        dataset_mod.save_dataset_jsonl(args.jsonl, data)
    print(f"wrote {data.n_transitions} transitions in "
          f"{len(data.trajectories)} trajectories to {args.out}")


def _cmd_train_tdr(args) -> None:
    data = dataset_mod.load_dataset(args.data)
    cfg = tdr.TdrConfig(
        latent_dim=args.dim, hidden=tuple(args.hidden), expectile=args.expectile,
        gamma=args.gamma, lr=args.lr, steps=args.steps, batch=args.batch, seed=args.seed,
    )
    model, history = tdr.train_tdr(data, cfg)
    tdr.save_tdr(args.out, model)
    if args.loss_csv:
        pipeline.write_loss_csv(args.loss_csv, ["step", "loss"], history)
    print(f"trained embedding for {args.steps} steps; final loss {history[-1][1]:.6f}")


def _cmd_build_graph(args) -> None:
    data = dataset_mod.load_dataset(args.data)
    model = tdr.load_tdr(args.tdr)
    g = graph.build_graph(
        data, model, h_td=args.h_td, te_thresh=args.te_thresh,
        node_method=args.node_method, node_count=args.node_count,
        kmeans_iters=args.kmeans_iters, seed=args.seed,
        cross_trajectory=not args.per_trajectory,
    )
    graph.save_graph(args.out, g)
    print(f"graph: {g.n_nodes} nodes, {len(g.edges)} edges "
          f"({g.meta['n_filtered']}/{g.meta['n_states']} states kept)")


def _cmd_train_policy(args) -> None:
    data = dataset_mod.load_dataset(args.data)
    model = tdr.load_tdr(args.tdr)
    cfg = agent_mod.AgentConfig(
        hidden=tuple(args.hidden), expectile=args.expectile, gamma=args.gamma,
        alpha=args.alpha, lr=args.lr, steps=args.steps, batch=args.batch,
        seed=args.seed, h_td=args.h_td, subgoal=args.subgoal, step_c=args.step_c,
    )
    pol, history = agent_mod.train_agent(data, model, cfg, a_max=args.a_max)
    agent_mod.save_agent(args.out, pol)
    if args.loss_csv:
        pipeline.write_loss_csv(
            args.loss_csv, ["step", "critic_loss", "value_loss", "actor_loss"], history
        )
    print(f"trained policy for {args.steps} steps")


def _cmd_eval(args) -> None:
    spec = maze.resolve_maze(args.maze)
    model = tdr.load_tdr(args.tdr)
    g = graph.load_graph(args.graph)
    pol = agent_mod.load_agent(args.policy)
    env = maze.make_env(spec, args.env, a_max=pol.a_max)
    goals = pipeline.eval_goal_states(env, spec, args.goals)
    rows = planner.evaluate(
        env, model, pol, g, goals, args.rollouts, args.seeds, g.h_td,
        max_steps=args.max_steps, epsilon=args.epsilon, stochastic=args.stochastic,
    )
    planner.write_eval_csv(rows, args.out)
    print(f"normalized return {planner.normalized_return(rows):.1f} -> {args.out}")
    if args.te_sweep:
        if not args.data:
            raise CliValidationError("--te-sweep needs --data")
        data = dataset_mod.load_dataset(args.data)
        te_mod.write_te_csv(te_mod.dataset_te_records(data, model, g.h_td), args.te_sweep)
        print(f"efficiency records -> {args.te_sweep}")


def _cmd_run(args) -> None:
    cfg = config_mod.load_config(args.config)
    manifest = pipeline.run_pipeline(cfg, cache_dir=args.cache_dir, force=args.force, log=print)
    print(f"manifest -> {manifest['manifest_path']}")


def _cmd_ablate(args) -> None:
    cfg = config_mod.load_config(args.config)
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliValidationError("--values is empty")
    rows = pipeline.ablate(cfg, args.axis, values, cache_dir=args.cache_dir, log=print)
    pipeline.write_ablate_csv(rows, args.out)
    for row in rows:
        print(f"{args.axis}={row['value']}: return {row['return_mean']:.1f} "
              f"+/- {row['return_std']:.1f}, {row['node_count']} nodes, "
              f"{row['retained_pct']:.1f}% retained")


def _cmd_report(args) -> None:
    entries = [_parse_entry(raw) for raw in args.entry]
    rows = report.aggregate(entries)
    os.makedirs(args.out_dir, exist_ok=True)
    report.write_report(rows, os.path.join(args.out_dir, "report.md"),
                        os.path.join(args.out_dir, "report.csv"))
    print(f"report -> {args.out_dir}/report.md")


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-tdr": _cmd_train_tdr,
    "build-graph": _cmd_build_graph,
    "train-policy": _cmd_train_policy,
    "eval": _cmd_eval,
    "run": _cmd_run,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}

_VALIDATION_ERRORS = (
    CliValidationError,
    config_mod.ConfigError,
    report.ReportError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except pipeline.StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # anything else inside a stage
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
