"""Command-line driver: data generation, training, embedding, evaluation,
the standalone solver, and gradient checks.

Configuration is a flat ``key = value`` text file validated against a
schema; unknown keys are rejected so typos cannot silently fall back to
defaults. All randomness flows from the seed and numeric CSV/TSV output
uses 17 significant digits, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .encoder import glorot_init
from .errors import ConfigError
from .evalharness import (
    aggregate_report,
    downstream_metrics,
    node_embeddings,
    summarize_runs,
)
from .graphstore import (
    AugmentationSpec,
    generate_sbm,
    greedy_partition,
    load_graph,
    save_graph,
    split_edges,
)
from .numcore import finite_diff_check
from .pareto import (
    DEFAULT_GAMMA,
    DEFAULT_XI,
    combined_direction,
    frank_wolfe_min_norm,
    saddle_point_residual,
)
from .pretext import (
    TASK_IDS,
    TaskConfig,
    build_task_tape,
    default_task_config,
    init_heads,
    prepare_batch,
)
from .trainer import TrainConfig, read_checkpoint, records_to_csv, train_run

GRAD_CHECK_TOL = 1e-4


def _fmt(x):
    return "%.17g" % x


# ---------------------------------------------------------------------------
# RunConfig: flat key=value schema


def _parse_bool(v):
    low = v.lower()
    if low in ("true", "false"):
        return low == "true"
    raise ValueError(f"expected true or false, got '{v}'")


def _parse_int_list(v):
    return tuple(int(p) for p in v.split(",") if p.strip())


def _parse_str_list(v):
    return tuple(p.strip() for p in v.split(",") if p.strip())


def _parse_float_list(v):
    return tuple(float(p) for p in v.split(",") if p.strip())


def _parse_seed_count(v):
    if v in ("full", "half"):
        return v
    return int(v)


def _schema():
    entries = {
        "graph": (str, ""),
        "checkpoint": (str, "model.ckpt"),
        "records_csv": (str, "records.csv"),
        "mode": (str, "pareto"),
        "single_task": (str, ""),
        "tasks": (_parse_str_list, TASK_IDS),
        "steps": (int, 1000),
        "learning_rate": (float, 5e-4),
        "weight_decay": (float, 1e-5),
        "solver_cap": (int, DEFAULT_GAMMA),
        "solver_tol": (float, DEFAULT_XI),
        "encoder_dims": (_parse_int_list, (64, 32)),
        "seed": (int, 0),
        "log_every": (int, 1),
        "scale_head_grads": (_parse_bool, True),
        "normalize_gradients": (_parse_bool, False),
        "record_wall_time": (_parse_bool, False),
        "topo_batch": (int, 256),
        "infonce_temperature": (float, 0.1),
        "decor_balance": (float, 1e-3),
        "adjacency_mode": (str, "sym_norm"),
        "partitions": (int, 10),
        "link_split": (_parse_float_list, (0.7, 0.1, 0.2)),
        "eval_seeds": (_parse_int_list, (0,)),
    }
    defaults = {
        "featrec": (0.5, 0.35, 0, "full"),
        "toporec": (0.0, 0.0, 2, "half"),
        "repdecor": (0.2, 0.2, 0, "half"),
        "ming": (0.0, 0.0, 2, "half"),
        "minsg": (0.2, 0.2, 2, "half"),
    }
    for task, (mask, drop, hops, seeds) in defaults.items():
        entries[f"{task}_mask"] = (float, mask)
        entries[f"{task}_drop"] = (float, drop)
        entries[f"{task}_hops"] = (int, hops)
        entries[f"{task}_seeds"] = (_parse_seed_count, seeds)
    return entries


CONFIG_SCHEMA = _schema()


def parse_config(text):
    """Flat key=value lines into a validated dict with schema defaults."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"config line {lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"config line {lineno}: duplicate key '{key}'")
        parser, _ = CONFIG_SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: bad value for "
                              f"'{key}': {exc}") from exc
    for key, (_, default) in CONFIG_SCHEMA.items():
        values.setdefault(key, default)
    return values


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def default_config():
    return {key: default for key, (_, default) in CONFIG_SCHEMA.items()}


def task_config_from(rc, n):
    def resolve(v):
        if v == "full":
            return "full"
        if v == "half":
            return max(1, n // 2)
        return int(v)

    specs = {
        task: AugmentationSpec(rc[f"{task}_mask"], rc[f"{task}_drop"],
                               rc[f"{task}_hops"], resolve(rc[f"{task}_seeds"]))
        for task in TASK_IDS
    }
    return TaskConfig(specs, rc["topo_batch"], rc["infonce_temperature"],
                      rc["decor_balance"], rc["adjacency_mode"])


def train_config_from(rc, n):
    return TrainConfig(
        mode=rc["mode"],
        single_task=rc["single_task"] or None,
        tasks=tuple(rc["tasks"]),
        steps=rc["steps"],
        learning_rate=rc["learning_rate"],
        weight_decay=rc["weight_decay"],
        solver_cap=rc["solver_cap"],
        solver_tol=rc["solver_tol"],
        encoder_dims=tuple(rc["encoder_dims"]),
        task_config=task_config_from(rc, n),
        seed=rc["seed"],
        log_every=rc["log_every"],
        scale_head_grads=rc["scale_head_grads"],
        normalize_gradients=rc["normalize_gradients"],
        record_wall_time=rc["record_wall_time"],
    )


def _load_run_config(args):
    rc = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        rc["seed"] = args.seed
    return rc


def _out_path(args, name):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    seed = args.seed if args.seed is not None else 0
    graph = generate_sbm(seed=seed, blocks=args.blocks, nodes=args.nodes,
                         p_intra=args.p_intra, p_inter=args.p_inter,
                         feat_dim=args.feat_dim, feat_noise=args.feat_noise)
    out = args.out or "graph"
    save_graph(graph, out)
    print(f"wrote graph: {graph.n} nodes, {graph.num_edges} edges -> {out}")
    return 0


def cmd_train(args):
    rc = _load_run_config(args)
    if not rc["graph"]:
        raise ConfigError("config key 'graph' must point to a graph directory")
    graph = load_graph(rc["graph"])
    config = train_config_from(rc, graph.n)
    ckpt = _out_path(args, rc["checkpoint"])
    csv = _out_path(args, rc["records_csv"])
    params, heads, records = train_run(graph, config, checkpoint_path=ckpt)
    with open(csv, "w", encoding="utf-8") as f:
        f.write(records_to_csv(records, config))
    last = records[-1]
    losses = " ".join(f"{t}={_fmt(v)}" for t, v in last.task_losses.items())
    print(f"trained {config.steps} steps ({config.mode}); final {losses}")
    print(f"checkpoint -> {ckpt}")
    print(f"records -> {csv}")
    return 0


def _checked_embeddings(ckpt_path, graph):
    params, heads = read_checkpoint(ckpt_path)
    if params.dims[0] != graph.feat_dim:
        raise ConfigError(
            f"checkpoint expects {params.dims[0]}-dim features, "
            f"graph has {graph.feat_dim}")
    return params, heads, node_embeddings(graph, params)


def cmd_embed(args):
    graph = load_graph(args.graph)
    _, _, emb = _checked_embeddings(args.checkpoint, graph)
    path = _out_path(args, "embeddings.tsv")
    with open(path, "w", encoding="utf-8") as f:
        for row in emb:
            f.write("\t".join(_fmt(v) for v in row) + "\n")
    print(f"wrote {emb.shape[0]} x {emb.shape[1]} embeddings -> {path}")
    return 0


def _evaluate_one(graph, emb, emb_link, split, parts, seeds):
    return [downstream_metrics(graph, emb, emb_link, split, parts, s)
            for s in seeds]


def cmd_eval(args):
    rc = _load_run_config(args)
    graph = load_graph(args.graph or rc["graph"])
    seeds = _parse_int_list(args.seeds) if args.seeds else tuple(rc["eval_seeds"])
    if not seeds:
        raise ConfigError("at least one evaluation seed is required")
    split = split_edges(graph, rc["link_split"], rc["seed"])
    parts = greedy_partition(graph, rc["partitions"], rc["seed"])
    link_config = train_config_from(rc, graph.n)
    link_params, _, _ = train_run(split.train_graph, link_config)
    emb_link = node_embeddings(split.train_graph, link_params)

    methods = {}
    for ckpt in args.checkpoint:
        name = os.path.splitext(os.path.basename(ckpt))[0]
        _, _, emb = _checked_embeddings(ckpt, graph)
        methods[name] = _evaluate_one(graph, emb, emb_link, split, parts, seeds)

    reports = {name: summarize_runs(rows) for name, rows in methods.items()}
    payload = {
        "seeds": list(seeds),
        "methods": {
            name: {"per_task": rep.per_task, "average": rep.average}
            for name, rep in reports.items()
        },
    }
    if len(methods) > 1:
        payload["comparison"] = aggregate_report(
            {name: {t: rep.per_task[t]["mean"] for t in rep.per_task}
             for name, rep in reports.items()})

    json_path = _out_path(args, "report.json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    csv_path = _out_path(args, "metrics.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("method,task,seed,value\n")
        for name, rows in methods.items():
            for seed, row in zip(seeds, rows):
                for task, value in row.items():
                    f.write(f"{name},{task},{seed},{_fmt(value)}\n")
    for name, rep in reports.items():
        print(f"{name}: average={_fmt(rep.average)}")
    print(f"report -> {json_path}")
    print(f"metrics -> {csv_path}")
    return 0


def read_gradient_file(path):
    with open(path, "r", encoding="utf-8") as f:
        tokens = f.read().split()
    if len(tokens) < 2:
        raise ConfigError("gradient file needs a 'K P' header")
    k, p = int(tokens[0]), int(tokens[1])
    body = tokens[2:]
    if len(body) != k * p:
        raise ConfigError(f"expected {k * p} gradient entries, got {len(body)}")
    return np.array([float(t) for t in body]).reshape(k, p)


def cmd_solve(args):
    grads = read_gradient_file(args.grads)
    alpha, trace = frank_wolfe_min_norm(grads, gamma=args.gamma, xi=args.xi)
    direction = combined_direction(grads, alpha)
    payload = {
        "alpha": [float(a) for a in alpha],
        "phi": float(direction @ direction),
        "iterations": trace.iterations,
        "residual": saddle_point_residual(grads, alpha),
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        path = _out_path(args, "solution.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    print(text, end="")
    return 0


def cmd_checkgrad(args):
    seed = args.seed if args.seed is not None else 0
    graph = generate_sbm(seed=seed, blocks=2, nodes=args.nodes, p_intra=0.5,
                         p_inter=0.15, feat_dim=5, feat_noise=0.4)
    dims = [graph.feat_dim] + list(args.dims)
    params = glorot_init(dims, seed + 1)
    heads = init_heads(dims[-1], graph.feat_dim, seed + 2)
    cfg = default_task_config(graph.n)
    rng = np.random.default_rng(seed + 3)
    failures = 0
    print(f"{'task':9s} {'max_rel_err':>12s}  verdict")
    for task in TASK_IDS:
        batch = prepare_batch(task, graph, cfg, rng)
        tape, inputs, head_names = build_task_tape(batch, params, heads, cfg)
        names = [f"w{i}" for i in range(len(args.dims))] + head_names
        worst = max(finite_diff_check(tape, inputs, parameter=nm) for nm in names)
        ok = worst < GRAD_CHECK_TOL
        failures += 0 if ok else 1
        print(f"{task:9s} {worst:12.3e}  {'pass' if ok else 'FAIL'}")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="paretossl",
        description="Multi-task self-supervised GNN training with Pareto "
                    "task weighting.")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=None,
                        help="output directory (default: current)")
    parser.add_argument("--config", default=None,
                        help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a stochastic block model graph")
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--nodes", type=int, default=600)
    p.add_argument("--p-intra", type=float, default=0.05)
    p.add_argument("--p-inter", type=float, default=0.005)
    p.add_argument("--feat-dim", type=int, default=24)
    p.add_argument("--feat-noise", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="run the training loop")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="export frozen node embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="four-task frozen-encoder evaluation")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint path (repeat to compare methods)")
    p.add_argument("--graph", default=None,
                   help="graph directory (default: config key)")
    p.add_argument("--seeds", default=None, help="comma-separated probe seeds")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="min-norm task weights for a gradient file")
    p.add_argument("--grads", required=True,
                   help="text file: 'K P' then K*P gradient entries")
    p.add_argument("--gamma", type=int, default=DEFAULT_GAMMA)
    p.add_argument("--xi", type=float, default=DEFAULT_XI)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("checkgrad", help="finite-difference check per task")
    p.add_argument("--nodes", type=int, default=12)
    p.add_argument("--dims", type=_parse_int_list, default=(5, 4))
    p.set_defaults(func=cmd_checkgrad)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
