"""Command-line interface.

Subcommands cover the full pipeline: ``synth`` (make a synthetic dataset),
``prepare`` (ingest, split, sample negatives, export split files), ``train``
(one configuration), ``grid`` (the full experiment grid), and ``analyze``
(standardization, best-loss frequencies, summary intervals, per-user
differences). Every command is deterministic given its flags: rerunning with
the same arguments reproduces output files byte for byte.
"""

import argparse
import os
import sys

from . import data, experiment
from .factors import load_checkpoint, save_checkpoint
from .metrics import PROTOCOL_METRICS, MetricKind
from .training import TrainConfig, select_best, train
from .util import fmt_float, read_json, write_csv, write_json


def _add_dataset_args(parser):
    parser.add_argument("--dataset", required=True, help="interactions file (user<TAB>item[<TAB>rating])")
    parser.add_argument("--format", choices=("unary", "graded"), default="graded")
    parser.add_argument("--threshold", type=int, default=4, help="minimum rating counted as relevant")
    parser.add_argument("--min-positives", type=int, default=25, help="drop users with fewer relevant items")


def _load_dataset(args) -> data.InteractionSet:
    return experiment.load_dataset(
        {
            "name": os.path.basename(args.dataset),
            "path": args.dataset,
            "format": args.format,
            "positive_threshold": args.threshold,
            "min_positives": args.min_positives,
        }
    )


def _cmd_synth(args):
    interactions = data.generate_synthetic(
        n_users=args.users,
        n_items=args.items,
        latent_dim=args.latent_dim,
        positives_per_user=args.positives,
        seed=args.seed,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    data.save_interactions(interactions, os.path.join(args.out_dir, "interactions.tsv"))
    write_json(
        os.path.join(args.out_dir, "dataset_meta.json"),
        {
            "n_users": interactions.n_users,
            "n_items": interactions.n_items,
            "latent_dim": args.latent_dim,
            "positives_per_user": args.positives,
            "seed": args.seed,
            "item_universe": interactions.item_labels,
        },
    )
    print(f"wrote {interactions.n_users} users x {interactions.n_items} items to {args.out_dir}")
    return 0


def _cmd_prepare(args):
    interactions = _load_dataset(args)
    os.makedirs(os.path.join(args.out_dir, "splits"), exist_ok=True)
    split_files = []
    capped = {}
    for split_id in range(args.splits):
        partial = data.split_train_test(interactions, split_id, args.split_seed, args.train_frac)
        for nsr in args.nsr:
            split = data.sample_negatives(partial, interactions, nsr, args.split_seed)
            name = f"split{split_id}_nsr{nsr:g}.csv"
            data.save_split(split, interactions, os.path.join(args.out_dir, "splits", name))
            split_files.append(name)
            if split.capped_users:
                capped[name] = split.capped_users
    write_json(
        os.path.join(args.out_dir, "prepare_manifest.json"),
        {
            "dataset": args.dataset,
            "format": args.format,
            "positive_threshold": args.threshold,
            "min_positives": args.min_positives,
            "n_users": interactions.n_users,
            "n_items": interactions.n_items,
            "n_interactions": interactions.n_interactions(),
            "splits": args.splits,
            "split_seed": args.split_seed,
            "train_frac": args.train_frac,
            "nsrs": args.nsr,
            "split_files": split_files,
            "capped_users": capped,
        },
    )
    print(f"prepared {args.splits} split(s) x {len(args.nsr)} NSR(s) in {args.out_dir}")
    return 0


def _cmd_train(args):
    interactions = _load_dataset(args)
    partial = data.split_train_test(interactions, args.split, args.split_seed)
    split = data.sample_negatives(partial, interactions, args.nsr, args.split_seed)
    loss, p = experiment.split_loss_key(args.paradigm, args.loss)
    if args.p is not None:
        p = args.p
    config = TrainConfig(
        paradigm=args.paradigm,
        loss=loss,
        p=p,
        learning_rate=args.lr,
        epochs=args.epochs,
        eval_every=args.eval_every,
        seed=args.seed,
        n_factors=args.n_factors,
        l2=args.l2,
    )
    history = train(config, split, interactions)
    os.makedirs(args.out_dir, exist_ok=True)
    history.save(os.path.join(args.out_dir, "history.csv"))
    if history.diagnostics:
        diag_keys = sorted(k for k in history.diagnostics[0] if k != "epoch")
        write_csv(
            os.path.join(args.out_dir, "training_log.csv"),
            ("epoch", *diag_keys),
            [(d["epoch"], *(fmt_float(d[k]) for k in diag_keys)) for d in history.diagnostics],
        )
    best_rows = []
    for metric in PROTOCOL_METRICS:
        epoch, value = select_best(history, metric)
        p_text = "" if metric.p is None else f"{metric.p:g}"
        best_rows.append((metric.kind, p_text, epoch, fmt_float(value)))
        save_checkpoint(
            history.checkpoints[epoch],
            os.path.join(args.out_dir, f"best_{metric.key.replace('@', '_')}.ckpt"),
            seed=config.seed,
        )
    write_csv(os.path.join(args.out_dir, "best_epochs.csv"), ("metric", "p", "epoch", "value"), best_rows)
    target = config.target_metric()
    best_epoch, _ = select_best(history, target)
    history.reports[best_epoch].save(os.path.join(args.out_dir, "eval_report.csv"))
    write_json(
        os.path.join(args.out_dir, "manifest.json"),
        {
            "dataset": args.dataset,
            "format": args.format,
            "split_id": args.split,
            "split_seed": args.split_seed,
            "nsr": args.nsr,
            "config": config.to_dict(),
            "diverged": history.diverged,
            "divergence": history.divergence,
        },
    )
    status = "diverged" if history.diverged else "finished"
    print(f"{status}: {args.paradigm}/{config.loss_key} lr={args.lr:g} -> {args.out_dir}")
    return 0


def _cmd_grid(args):
    spec = experiment.GridSpec.load(args.config)
    if args.epochs is not None:
        spec.epochs = args.epochs
    if args.eval_every is not None:
        spec.eval_every = args.eval_every
    rows = experiment.run_grid(spec, out_dir=args.out_dir, workers=args.workers, resume=args.resume)
    print(f"grid complete: {len(rows)} result rows in {args.out_dir}")
    return 0


def _cmd_analyze(args):
    rows = experiment.load_results(args.results)
    os.makedirs(args.out_dir, exist_ok=True)
    std_rows = experiment.standardize(rows)
    experiment.save_standardized(std_rows, os.path.join(args.out_dir, "standardized.csv"))
    counts = experiment.best_loss_frequency(rows)
    experiment.save_frequency(counts, os.path.join(args.out_dir, "frequency.csv"))
    summary = experiment.summarize(std_rows, n_boot=args.bootstrap, seed=args.seed)
    experiment.save_summary(summary, os.path.join(args.out_dir, "summary.csv"))
    wrote = ["standardized.csv", "frequency.csv", "summary.csv"]
    if args.grid_dir is not None:
        _analyze_per_user_diff(args, rows)
        wrote.append("per_user_diff.csv")
    print(f"wrote {', '.join(wrote)} to {args.out_dir}")
    return 0


def _find_cell_record(grid_dir, spec, cell):
    path = os.path.join(grid_dir, "cells", f"{spec.cell_key(cell)}.json")
    if not os.path.exists(path):
        raise SystemExit(f"no cached cell for {cell}; run the grid with checkpoints enabled")
    return read_json(path)


def _analyze_per_user_diff(args, rows):
    spec = experiment.GridSpec.load(os.path.join(args.grid_dir, "grid_manifest.json"))
    dataset = args.diff_dataset or spec.datasets[0]["name"]
    nsr = args.diff_nsr if args.diff_nsr is not None else max(spec.nsrs)
    metric = args.diff_metric
    records = []
    for split_id in spec.split_ids if args.diff_split is None else [args.diff_split]:
        cell_a = {"dataset": dataset, "split_id": split_id, "nsr": nsr, "paradigm": args.diff_paradigm, "loss": args.diff_a}
        cell_b = {**cell_a, "loss": args.diff_b}
        rec_a = _find_cell_record(args.grid_dir, spec, cell_a)
        rec_b = _find_cell_record(args.grid_dir, spec, cell_b)
        model_a, _ = load_checkpoint(os.path.join(args.grid_dir, rec_a["checkpoints"][metric]))
        model_b, _ = load_checkpoint(os.path.join(args.grid_dir, rec_b["checkpoints"][metric]))
        interactions = experiment.load_dataset(experiment._dataset_spec(spec, dataset))
        split = experiment.build_split(spec, interactions, split_id, nsr)
        diff = experiment.per_user_diff(model_a, model_b, split, MetricKind.parse(metric))
        context = (
            ("dataset", dataset),
            ("split_id", split_id),
            ("nsr", fmt_float(nsr)),
            ("paradigm", args.diff_paradigm),
            ("eval_metric", metric),
            ("loss_a", args.diff_a),
            ("loss_b", args.diff_b),
        )
        records.append((context, diff))
    names = tuple(n for n, _ in records[0][0])
    all_rows = []
    for context, diff in records:
        values = tuple(v for _, v in context)
        all_rows.extend(values + (u, m, fmt_float(d)) for u, m, d in diff)
    write_csv(
        os.path.join(args.out_dir, "per_user_diff.csv"),
        names + ("user", "train_positives", "diff"),
        all_rows,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ranklab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--users", type=int, default=200)
    p_synth.add_argument("--items", type=int, default=500)
    p_synth.add_argument("--latent-dim", type=int, default=8)
    p_synth.add_argument("--positives", type=int, default=25)
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.add_argument("--out-dir", required=True)
    p_synth.set_defaults(fn=_cmd_synth)

    p_prep = sub.add_parser("prepare", help="binarize, split, and sample negatives")
    _add_dataset_args(p_prep)
    p_prep.add_argument("--splits", type=int, default=3, help="number of independent splits")
    p_prep.add_argument("--nsr", type=float, action="append", default=None,
                        help="negative sampling ratio; repeat for several (default 1 2 5)")
    p_prep.add_argument("--train-frac", type=float, default=0.8)
    p_prep.add_argument("--split-seed", type=int, default=13)
    p_prep.add_argument("--out-dir", required=True)
    p_prep.set_defaults(fn=_cmd_prepare)

    p_train = sub.add_parser("train", help="train one configuration")
    _add_dataset_args(p_train)
    p_train.add_argument("--split", type=int, default=0)
    p_train.add_argument("--split-seed", type=int, default=13)
    p_train.add_argument("--nsr", type=float, default=1.0)
    p_train.add_argument("--paradigm", choices=("pairwise", "listwise"), required=True)
    p_train.add_argument("--loss", required=True, help="rr, ap, ndcg, nrbp or nrbp@P")
    p_train.add_argument("--p", type=float, default=None, help="persistence for pairwise nrbp")
    p_train.add_argument("--lr", type=float, default=0.01)
    p_train.add_argument("--epochs", type=int, default=3000)
    p_train.add_argument("--eval-every", type=int, default=10)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--n-factors", type=int, default=32)
    p_train.add_argument("--l2", type=float, default=0.0)
    p_train.add_argument("--out-dir", required=True)
    p_train.set_defaults(fn=_cmd_train)

    p_grid = sub.add_parser("grid", help="run a full experiment grid from a JSON spec")
    p_grid.add_argument("--config", required=True, help="grid spec JSON (see README for the schema)")
    p_grid.add_argument("--out-dir", required=True)
    p_grid.add_argument("--workers", type=int, default=1)
    p_grid.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True,
                        help="reuse completed cells found in --out-dir (default on)")
    p_grid.add_argument("--epochs", type=int, default=None, help="override the spec's epoch count")
    p_grid.add_argument("--eval-every", type=int, default=None)
    p_grid.set_defaults(fn=_cmd_grid)

    p_an = sub.add_parser("analyze", help="derive analysis tables from grid results")
    p_an.add_argument("--results", required=True, help="results.csv from a grid run")
    p_an.add_argument("--out-dir", required=True)
    p_an.add_argument("--bootstrap", type=int, default=1000)
    p_an.add_argument("--seed", type=int, default=0)
    p_an.add_argument("--grid-dir", default=None,
                      help="grid output dir with cached cells; enables per-user differences")
    p_an.add_argument("--diff-paradigm", choices=("pairwise", "listwise"), default="listwise")
    p_an.add_argument("--diff-a", default="nrbp", help="loss key of the left model")
    p_an.add_argument("--diff-b", default="ndcg", help="loss key of the right model")
    p_an.add_argument("--diff-metric", default="nrbp@0.95")
    p_an.add_argument("--diff-dataset", default=None)
    p_an.add_argument("--diff-split", type=int, default=None, help="restrict to one split id")
    p_an.add_argument("--diff-nsr", type=float, default=None)
    p_an.set_defaults(fn=_cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
