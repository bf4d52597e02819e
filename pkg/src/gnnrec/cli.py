"""Command-line entry point: ingest | expand | train | eval | bench | analyze.

Settings resolve as flags > config file (--config) > built-in defaults; every
subcommand takes --seed.  Failures exit nonzero after printing one
machine-readable ``error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import evaluate, kernels, kron, membench, redundancy
from .config import ConfigError, EngineConfig, load_config
from .graph import BipartiteGraph, GraphError, load_edge_list, split_train_test
from .models import (ModelConfig, init_params, load_checkpoint, model_forward,
                     save_checkpoint)
from .train import TrainError, fit


def _load_graph(path, compact=False):
    """Edge-list or binary graph cache, decided by the file's magic bytes."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == b"BGC1":
        return BipartiteGraph.load(path)
    return load_edge_list(path, compact_ids=compact)


def _engine_config(args):
    cfg = EngineConfig()
    if getattr(args, "config", None):
        load_config(args.config, base=cfg)
    for flag, key in getattr(args, "_flag_keys", []):
        value = getattr(args, flag)
        if value is not None:
            cfg.set(key, value)
    if getattr(args, "seed", None) is not None:
        for key in ("train.seed", "split.seed", "bench.seed", "analyze.seed"):
            cfg.set(key, args.seed)
    return cfg


def _add_config_flags(parser, mapping):
    flags = []
    for flag, key, kind, help_text in mapping:
        parser.add_argument(flag, type=kind, default=None, dest=flag.lstrip("-").replace("-", "_"),
                            help=f"{help_text} (config: {key})")
        flags.append((flag.lstrip("-").replace("-", "_"), key))
    parser.set_defaults(_flag_keys=flags)


def cmd_ingest(args):
    g = load_edge_list(args.input, format=args.format,
                       compact_ids=not args.no_compact)
    g.save(args.out)
    if g.user_ids is not None:
        base = args.mapping_out or args.out
        np.savetxt(base + ".users.map", g.user_ids, fmt="%d")
        np.savetxt(base + ".items.map", g.item_ids, fmt="%d")
    print(f"ingested {args.input}: {g.num_users} users, {g.num_items} items, "
          f"{g.num_edges} edges -> {args.out}")
    return 0


def cmd_expand(args):
    g = _load_graph(args.input)
    if args.seed_mask:
        seed_block = kron.SeedBlock.from_text(args.seed_mask)
    elif args.factor:
        seed_block = kron.SeedBlock.all_ones(args.factor)
    else:
        raise ConfigError("expand needs --factor or --seed-mask")
    nu, ni, ne = kron.expanded_counts(g, seed_block)
    if args.out_format == "edgelist":
        kron.expand_to_edge_list(g, seed_block, args.out,
                                 max_edges=args.max_edges)
    else:
        out = kron.expand(g, seed_block, max_edges=args.max_edges,
                          permute_seed=args.permute_seed)
        out.save(args.out)
    print(f"expanded {args.input} x{seed_block.nnz}: {nu} users, {ni} items, "
          f"{ne} edges -> {args.out}")
    return 0


def cmd_train(args):
    cfg = _engine_config(args)
    g = _load_graph(args.input)
    train_g, test_g = split_train_test(g, cfg.get("split.fraction"),
                                       cfg.get("split.seed"))
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    opts = cfg.kernel_opts()
    params = init_params(g.num_users, g.num_items, model_cfg,
                         seed=train_cfg.seed)
    eval_fn = None
    if train_cfg.eval_every and test_g.num_edges:
        def eval_fn(p):
            fu, fi, _ = model_forward(train_g, p, model_cfg, opts)
            return evaluate.recall_at_k(fu, fi, train_g, test_g,
                                        cfg.get("eval.k")).recall
    checkpoint_fn = None
    if args.checkpoint_out and train_cfg.checkpoint_every:
        def checkpoint_fn(p, epoch):
            save_checkpoint(f"{args.checkpoint_out}.epoch{epoch}", p, model_cfg)
    kernels.reset_counters()
    result = fit(train_g, params, model_cfg, train_cfg, opts,
                 eval_fn=eval_fn, checkpoint_fn=checkpoint_fn,
                 log_fn=(lambda h: print(
                     f"epoch {h.epoch}: batch {h.batch} lr {h.lr:.3g} "
                     f"loss {h.loss:.5f}"
                     + (f" recall@{cfg.get('eval.k')} {h.recall:.4f}"
                        if h.recall is not None else ""),
                     flush=True)) if args.verbose else None)
    if args.metrics_out:
        result.write_metrics(args.metrics_out, k=cfg.get("eval.k"))
    if args.checkpoint_out:
        save_checkpoint(args.checkpoint_out, params, model_cfg)
    if args.emit_plot_data:
        result.write_metrics(args.emit_plot_data + "_curve.csv",
                             k=cfg.get("eval.k"))
        kernels.counters.to_csv(args.emit_plot_data + "_kernels.csv")
    print(f"trained {model_cfg.model}-{model_cfg.num_layers}L-"
          f"{model_cfg.embed_dim}E for {train_cfg.epochs} epochs; "
          f"final loss {result.history[-1].loss:.5f}" if result.history
          else "trained for 0 epochs")
    return 0


def cmd_eval(args):
    cfg = _engine_config(args)
    g = _load_graph(args.input)
    params, model_cfg = load_checkpoint(args.checkpoint)
    train_g, test_g = split_train_test(g, cfg.get("split.fraction"),
                                       cfg.get("split.seed"))
    opts = cfg.kernel_opts()
    s = cfg.sampling_factor()
    if math.isinf(s):
        fu, fi, _ = model_forward(train_g, params, model_cfg, opts)
    else:
        fu, fi = evaluate.sampled_forward(
            train_g, params, model_cfg, s,
            np.random.default_rng(cfg.get("split.seed")), opts)
    result = evaluate.recall_at_k(fu, fi, train_g, test_g, cfg.get("eval.k"))
    line = result.to_csv_row()
    if args.out:
        with open(args.out, "w") as f:
            f.write("k,recall,users_evaluated\n")
            f.write(line + "\n")
    print(line)
    return 0


def cmd_bench(args):
    cfg = _engine_config(args)
    placements = []
    for name in (args.placements or "none").split(","):
        name = name.strip()
        if name == "none":
            placements.append(None)
        else:
            placements.append(membench.PlacementPolicy(kind=name))
    node_set = tuple(int(n) for n in args.nodes.split(",")) if args.nodes else ()
    base = membench.BenchSpec(
        region_bytes=cfg.get("bench.region_bytes"),
        repetitions=cfg.get("bench.repetitions"),
        seed=cfg.get("bench.seed"),
        node_set=node_set,
        min_region_bytes=args.min_region_bytes)
    records, rows = membench.sweep(
        base,
        patterns=[p.strip() for p in args.patterns.split(",")],
        ops=[o.strip() for o in args.ops.split(",")],
        access_sizes=[int(s) for s in args.access_sizes.split(",")],
        thread_counts=[int(t) for t in args.threads.split(",")],
        placements=placements,
        csv_path=args.out,
        cooldown_s=cfg.get("bench.cooldown_ms") / 1000.0,
        progress=(lambda row: print(",".join(row), flush=True))
        if args.verbose else None)
    if args.metadata_out:
        membench.write_host_metadata(args.metadata_out)
    print(f"bench: {len(records)} cells ok, "
          f"{len(rows) - len(records)} failed"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def cmd_analyze(args):
    cfg = _engine_config(args)
    g = _load_graph(args.input)
    workers = cfg.get("analyze.workers")
    batch = cfg.get("analyze.batch")
    layers = cfg.get("analyze.layers")
    sampling = cfg.get("analyze.sampling") or math.inf
    seed = cfg.get("analyze.seed")
    report = redundancy.batch_redundancy(g, batch, workers, layers,
                                         sampling, rng=seed,
                                         model_dim=cfg.get("model.dim"))
    budget = cfg.get("analyze.budget_bytes")
    model_cfg = ModelConfig(model=cfg.get("model.kind"), num_layers=layers,
                            embed_dim=cfg.get("model.dim"))
    max_batch = ""
    if budget:
        max_batch = redundancy.max_batch_under_budget(
            g, model_cfg, budget, workers, sampling, seed=seed)
    row = redundancy.report_csv_row(workers, batch, layers, sampling, report,
                                    max_batch)
    header = "workers,batch,L,sampling,ratio_vertices,ratio_edges,max_batch"
    if args.out:
        with open(args.out, "w") as f:
            f.write(header + "\n" + row + "\n")
    print(header)
    print(row)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gnnrec",
        description="GNN recommender training engine and benchmarking tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build the binary graph cache")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="auto",
                   choices=("auto", "tsv", "whitespace"))
    p.add_argument("--no-compact", action="store_true",
                   help="keep original vertex ids instead of compacting")
    p.add_argument("--mapping-out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("expand", help="Kronecker-expand a graph")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--factor", type=int, default=None,
                   help="all-ones k x k seed block")
    p.add_argument("--seed-mask", default=None,
                   help="text file with a dense 0/1 seed grid")
    p.add_argument("--max-edges", type=int, default=None)
    p.add_argument("--permute-seed", type=int, default=None)
    p.add_argument("--out-format", default="cache",
                   choices=("cache", "edgelist"))
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("train", help="train a model with BPR")
    p.add_argument("input")
    p.add_argument("--config", default=None)
    p.add_argument("--metrics-out", default=None)
    p.add_argument("--checkpoint-out", default=None)
    p.add_argument("--emit-plot-data", default=None, metavar="PREFIX",
                   help="write PREFIX_curve.csv and PREFIX_kernels.csv")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p, [
        ("--model", "model.kind", str, "ngcf or lightgcn"),
        ("--layers", "model.layers", int, "message-passing layers"),
        ("--dim", "model.dim", int, "embedding length"),
        ("--combine", "model.combine", str, "auto, concat, or mean"),
        ("--epochs", "train.epochs", int, "training epochs"),
        ("--large-batch", "train.large_batch", int, "post-warm-up batch size"),
        ("--base-batch", "train.base_batch", int, "batch the base lr refers to"),
        ("--base-lr", "train.base_lr", float, "learning rate at base batch"),
        ("--warmup-epochs", "train.warmup_epochs", int, "epochs on small batch"),
        ("--warmup-divisor", "train.warmup_divisor", int,
         "warm-up batch = large batch / divisor"),
        ("--l2", "train.l2_coeff", float, "L2 coefficient"),
        ("--optimizer", "train.optimizer", str, "adam or sgd"),
        ("--split-fraction", "split.fraction", float, "train fraction"),
        ("--eval-every", "train.eval_every", int, "epochs between recall evals"),
        ("--checkpoint-every", "train.checkpoint_every", int,
         "epochs between intermediate checkpoints"),
        ("--sddmm-workers", "sddmm.workers", int, "threads for SDDMM"),
        ("--spmm-workers", "spmm.workers", int, "threads for SpMM"),
    ])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="recall@k from a checkpoint")
    p.add_argument("input")
    p.add_argument("checkpoint")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    _add_config_flags(p, [
        ("--k", "eval.k", int, "recommendation list length"),
        ("--sampling-factor", "eval.sampling_factor", int,
         "neighbors aggregated per vertex (0 = all)"),
        ("--split-fraction", "split.fraction", float, "train fraction"),
    ])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="memory-bandwidth sweep")
    p.add_argument("--patterns", default="sequential,random")
    p.add_argument("--ops", default="read,write,nt_write")
    p.add_argument("--access-sizes", default="64,256,1024,4096")
    p.add_argument("--threads", default="1")
    p.add_argument("--placements", default="none",
                   help="comma list of none, interleaved, blocked")
    p.add_argument("--nodes", default=None, help="memory nodes, e.g. 0,1")
    p.add_argument("--out", default=None, help="CSV path (appends)")
    p.add_argument("--metadata-out", default=None)
    p.add_argument("--min-region-bytes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--config", default=None)
    _add_config_flags(p, [
        ("--region-bytes", "bench.region_bytes", int, "region size in bytes"),
        ("--repetitions", "bench.repetitions", int, "repetitions per cell"),
        ("--cooldown-ms", "bench.cooldown_ms", int, "pause between cells"),
    ])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="subgraph redundancy report")
    p.add_argument("input")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    _add_config_flags(p, [
        ("--workers", "analyze.workers", int, "simulated machines"),
        ("--batch", "analyze.batch", int, "batch size per worker"),
        ("--layers", "analyze.layers", int, "model layers"),
        ("--sampling", "analyze.sampling", int, "sampling factor (0 = none)"),
        ("--budget-bytes", "analyze.budget_bytes", int,
         "aggregate memory budget for the max-batch search"),
        ("--dim", "model.dim", int, "embedding length for the estimate"),
    ])
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GraphError, ConfigError, TrainError, evaluate.EvalError,
            membench.MembenchError, kron.ExpansionTooLarge, OSError,
            ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
