"""Command-line entry point: ``ilerec <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiment as ex
from .bpr import RecommendationSet, load_checkpoint, recommend_all, save_checkpoint, train
from .ingest import DatasetError, write_grouping
from .metrics import evaluate, read_metrics_csv, write_metrics_csv
from .plotting import plot_group_losses
from .synth import synth_dataset

log = logging.getLogger("ilerec")

# (flag, config key, type)
CONFIG_FLAGS = [
    ("--dataset", "dataset", str),
    ("--format", "format", str),
    ("--delimiter", "delimiter", str),
    ("--synth-users", "synth_users", int),
    ("--synth-items", "synth_items", int),
    ("--synth-interactions", "synth_interactions", int),
    ("--synth-zipf", "synth_zipf", float),
    ("--synth-seed", "synth_seed", int),
    ("--train-ratio", "train_ratio", float),
    ("--split-seed", "split_seed", int),
    ("--lr", "learning_rate", float),
    ("--dim", "dim", int),
    ("--epochs", "epochs", int),
    ("--batch-size", "batch_size", int),
    ("--l2", "l2_reg", float),
    ("--seed", "seed", int),
    ("--method", "method", str),
    ("--lam", "lam", float),
    ("--distance", "distance", str),
    ("--ent-floor", "ent_floor", float),
    ("--cp-n", "cp_n", int),
    ("--ips-gamma", "ips_gamma", float),
    ("--ips-clip", "ips_clip", float),
    ("--uncertainty-seeds", "uncertainty_seeds", str),
    ("-k", "k", int),
    ("--out", "out_dir", str),
]


def add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--preset", choices=sorted(ex.PRESETS), help="hyperparameter preset applied before the config file")
    for flag, key, kind in CONFIG_FLAGS:
        p.add_argument(flag, dest=key, type=kind, default=None)
    p.add_argument("--header", dest="header", action="store_const", const=True, default=None,
                   help="dataset file starts with a header line")
    p.add_argument("--no-plots", dest="plots", action="store_const", const=False, default=None)


def config_from_args(args) -> ex.ExperimentConfig:
    overrides = {key: getattr(args, key) for _, key, _ in CONFIG_FLAGS}
    overrides["header"] = args.header
    overrides["plots"] = args.plots
    return ex.build_config(args.preset, args.config, **overrides)


def cmd_ingest(args) -> int:
    cfg = config_from_args(args)
    ds, split, grouping = ex.prepare(cfg)
    summary = ds.summary()
    summary.update(train=len(split.train), test=len(split.test),
                   group_sizes=dict(zip("HMT", grouping.sizes())),
                   group_boundaries=list(grouping.boundaries))
    print(json.dumps(summary, indent=2))
    if args.groups_out:
        write_grouping(args.groups_out, grouping, split.train.item_ids)
    return 0


def cmd_synth(args) -> int:
    ds = synth_dataset(args.users, args.items, args.interactions, args.zipf, args.seed)
    with open(args.output, "w") as fh:
        fh.write(f"# synthetic zipf s={args.zipf} seed={args.seed}\n")
        for u, i in zip(ds.users, ds.items):
            fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\n")
    print(f"wrote {len(ds)} interactions to {args.output}")
    return 0


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    ds, split, grouping = ex.prepare(cfg)
    ile_cfg = cfg.ile_config()
    if cfg.method == "IPS":
        from .baselines import build_propensities, train_ips
        table = build_propensities(grouping.counts, cfg.ips_gamma, cfg.ips_clip)
        model, trace = train_ips(split.train, grouping, cfg.train_config(), table)
    else:
        model, trace = train(split.train, grouping, cfg.train_config(), ile_cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.run_name()
    save_checkpoint(out / f"{name}_model.ckpt", model)
    trace.write_csv(out / f"{name}_trace.csv")
    if cfg.plots:
        plot_group_losses(trace, out / f"{name}_group_losses.png", title=name)
    last = trace.rows[-1]
    print(f"epoch {last['epoch']}: L={last['L']:.4f} L_H={last['L_H']:.4f} "
          f"L_M={last['L_M']:.4f} L_T={last['L_T']:.4f}")
    print(f"checkpoint: {out / f'{name}_model.ckpt'}")
    return 0


def cmd_recommend(args) -> int:
    cfg = config_from_args(args)
    _, split, _ = ex.prepare(cfg)
    model = load_checkpoint(args.checkpoint)
    recs = recommend_all(model, split.train, cfg.k)
    recs.write_csv(args.output, split.train.user_ids, split.train.item_ids)
    if recs.truncated:
        log.warning("%d users had fewer than %d eligible items", len(recs.truncated), cfg.k)
    print(f"wrote recommendations for {len(recs.users())} users to {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = config_from_args(args)
    _, split, grouping = ex.prepare(cfg)
    recs = RecommendationSet.read_csv(args.recs, split.train.user_index, split.train.item_index)
    report = evaluate(recs, split.train, split.test, grouping, cfg.k)
    write_metrics_csv(args.output, [(cfg.method, cfg.method_params(), report)])
    print(json.dumps(read_metrics_csv(args.output)[0]))
    return 0


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    methods = [m.strip() for m in (args.methods or cfg.method).split(",") if m.strip()]
    if len(methods) == 1:
        runs = [ex.run_experiment(replace(cfg, method=methods[0].upper()))]
    else:
        runs = ex.compare(cfg, methods)
    for r in runs:
        rep = r.report
        print(f"{r.name}: ndcg={rep.ndcg:.4f} upd={rep.upd:.4f} ad={rep.ad:.4f} ee={rep.ee:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    lambdas = [float(x) for x in args.lambdas.split(",")]
    methods = args.methods.split(",") if args.methods else None
    rows = ex.sweep(cfg, lambdas, methods)
    for r in rows:
        print(f"{r['method']} lambda={r['lambda']}: ndcg={r['ndcg']:.4f} upd={r['upd']:.4f} "
              f"ad={r['ad']:.4f} ee={r['ee']:.4f} [{r['status']}]")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilerec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and summarize a dataset")
    add_config_args(p)
    p.add_argument("--groups-out", help="write item_id,count,group CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a Zipf-skewed synthetic dataset")
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--interactions", type=int, default=8000)
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train BPR, ILE or IPS and write checkpoint + loss trace")
    add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recommend", help="top-K lists from a checkpoint")
    add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("evaluate", help="metrics for a recommendation dump")
    add_config_args(p)
    p.add_argument("--recs", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="end-to-end experiment for one or more methods")
    add_config_args(p)
    p.add_argument("--methods", help="comma-separated methods; more than one also writes table.csv and runtimes.png")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="accuracy/fairness trade-off over lambda values")
    add_config_args(p)
    p.add_argument("--lambdas", required=True, help="comma-separated lambda values")
    p.add_argument("--methods", help="comma-separated methods (default: --method)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, ex.ExperimentError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
