"""Experiment grid and analysis products.

The grid crosses dataset x split x NSR x paradigm x loss. Each cell runs a
learning-rate search, selects the best epoch per evaluation metric, and
yields one result row per metric. Cells are keyed by a hash of their full
configuration and cached on disk, so an interrupted grid resumes where it
stopped and a finished one is idempotent.

Analyses: within-(dataset, NSR, metric) score standardization, best-loss
frequency counts with ties credited to all winners, per-user score
differences between two models, and standardized means with bootstrap
percentile intervals (a deliberately simple summary; no linear modeling).
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import data
from .errors import DataError, GridError
from .factors import FactorModel, save_checkpoint
from .metrics import PROTOCOL_METRICS, MetricKind, RankedList, evaluate_user
from .training import (
    LISTWISE_LR_GRID,
    PAIRWISE_LR_GRID,
    TrainConfig,
    lr_search,
    select_best,
)
from .util import fmt_float, read_json, stable_digest, subseed, write_csv, write_json

PAIRWISE_PROTOCOL_LOSSES = ("rr", "ap", "ndcg", "nrbp@0.8", "nrbp@0.9", "nrbp@0.95")
LISTWISE_PROTOCOL_LOSSES = ("rr", "ap", "ndcg", "nrbp")

RESULT_COLUMNS = (
    "dataset",
    "split_id",
    "nsr",
    "paradigm",
    "loss",
    "eval_metric",
    "value",
    "best_epoch",
    "learning_rate",
)


def split_loss_key(paradigm: str, key: str) -> tuple[str, float | None]:
    """'nrbp@0.95' -> ('nrbp', 0.95); plain keys carry no persistence."""
    if "@" in key:
        loss, _, p = key.partition("@")
        return loss, float(p)
    return key, None


@dataclass(order=True, frozen=True)
class GridResultRow:
    dataset: str
    split_id: int
    nsr: float
    paradigm: str
    loss: str
    eval_metric: str
    value: float
    best_epoch: int
    learning_rate: float

    def to_csv_row(self):
        return (
            self.dataset,
            self.split_id,
            fmt_float(self.nsr),
            self.paradigm,
            self.loss,
            self.eval_metric,
            fmt_float(self.value),
            self.best_epoch,
            fmt_float(self.learning_rate),
        )


@dataclass
class GridSpec:
    """Declarative description of one experiment grid."""

    datasets: list
    split_ids: list = field(default_factory=lambda: [0, 1, 2])
    nsrs: list = field(default_factory=lambda: [1.0, 2.0, 5.0])
    paradigms: list = field(default_factory=lambda: ["pairwise", "listwise"])
    pairwise_losses: list = field(default_factory=lambda: list(PAIRWISE_PROTOCOL_LOSSES))
    listwise_losses: list = field(default_factory=lambda: list(LISTWISE_PROTOCOL_LOSSES))
    lr_grid_pairwise: list = field(default_factory=lambda: list(PAIRWISE_LR_GRID))
    lr_grid_listwise: list = field(default_factory=lambda: list(LISTWISE_LR_GRID))
    epochs: int = 3000
    eval_every: int = 10
    n_factors: int = 32
    l2: float = 0.0
    init_std: float = 0.1
    train_frac: float = 0.8
    seed: int = 42
    split_seed: int = 13
    save_checkpoints: bool = True

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown grid spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "GridSpec":
        return cls.from_dict(read_json(path))

    def losses_for(self, paradigm: str) -> list:
        return self.pairwise_losses if paradigm == "pairwise" else self.listwise_losses

    def lr_grid_for(self, paradigm: str) -> list:
        return self.lr_grid_pairwise if paradigm == "pairwise" else self.lr_grid_listwise

    def cells(self) -> list:
        out = []
        for ds in self.datasets:
            for split_id in self.split_ids:
                for nsr in self.nsrs:
                    for paradigm in self.paradigms:
                        for loss_key in self.losses_for(paradigm):
                            out.append(
                                {
                                    "dataset": ds["name"],
                                    "split_id": int(split_id),
                                    "nsr": float(nsr),
                                    "paradigm": paradigm,
                                    "loss": loss_key,
                                }
                            )
        return out

    def cell_key(self, cell: dict) -> str:
        """Hash of everything that can influence one cell's results."""
        return stable_digest(
            cell["dataset"],
            cell["split_id"],
            fmt_float(cell["nsr"]),
            cell["paradigm"],
            cell["loss"],
            [fmt_float(r) for r in self.lr_grid_for(cell["paradigm"])],
            self.epochs,
            self.eval_every,
            self.n_factors,
            fmt_float(self.l2),
            fmt_float(self.init_std),
            fmt_float(self.train_frac),
            self.seed,
            self.split_seed,
        )[:16]


def load_dataset(ds_spec: dict) -> data.InteractionSet:
    """Materialize one dataset entry: synthetic parameters or a ratings file.

    File-backed entries may sit next to a ``dataset_meta.json`` whose
    ``item_universe`` pins the full item space (written by the synthetic
    generator so items without interactions survive the round trip).
    """
    if "synthetic" in ds_spec:
        return data.generate_synthetic(**ds_spec["synthetic"])
    path = ds_spec["path"]
    raw = data.load_interactions(path, format=ds_spec.get("format", "graded"))
    item_universe = None
    meta_path = os.path.join(os.path.dirname(os.path.abspath(path)), "dataset_meta.json")
    if os.path.exists(meta_path):
        item_universe = read_json(meta_path).get("item_universe")
    return data.binarize_and_filter(
        raw,
        positive_threshold=ds_spec.get("positive_threshold", 4),
        min_positives=ds_spec.get("min_positives", 25),
        item_universe=item_universe,
    )


def build_split(spec: GridSpec, interactions, split_id: int, nsr: float) -> data.SplitAssignment:
    partial = data.split_train_test(interactions, split_id, spec.split_seed, spec.train_frac)
    return data.sample_negatives(partial, interactions, nsr, spec.split_seed)


def cell_train_seed(spec: GridSpec, dataset: str, split_id: int) -> int:
    """Same initialization for every loss and NSR within one (dataset, split)."""
    return int(stable_digest("train-seed", spec.seed, dataset, split_id)[:16], 16)


def _dataset_spec(spec: GridSpec, name: str) -> dict:
    for ds in spec.datasets:
        if ds["name"] == name:
            return ds
    raise GridError(f"grid spec has no dataset named {name!r}")


def run_cell(spec: GridSpec, cell: dict, out_dir=None) -> dict:
    """Execute one grid cell and return its record (also cached to disk)."""
    interactions = load_dataset(_dataset_spec(spec, cell["dataset"]))
    split = build_split(spec, interactions, cell["split_id"], cell["nsr"])
    loss, p = split_loss_key(cell["paradigm"], cell["loss"])
    base = TrainConfig(
        paradigm=cell["paradigm"],
        loss=loss,
        p=p,
        epochs=spec.epochs,
        eval_every=spec.eval_every,
        seed=cell_train_seed(spec, cell["dataset"], cell["split_id"]),
        n_factors=spec.n_factors,
        l2=spec.l2,
        init_std=spec.init_std,
    )
    key = spec.cell_key(cell)
    record = {**cell, "key": key, "failed": None, "rows": [], "attempts": [], "checkpoints": {}}
    try:
        result = lr_search(
            base,
            split,
            interactions,
            grid=spec.lr_grid_for(cell["paradigm"]),
            keep_checkpoints=True,
        )
    except GridError as exc:
        record["failed"] = str(exc)
        return record
    record["attempts"] = [[fmt_float(r), v, d] for r, v, d in result.attempts]
    record["learning_rate"] = result.best_config.learning_rate
    for metric in PROTOCOL_METRICS:
        epoch, value = select_best(result.best_history, metric)
        record["rows"].append([metric.key, value, epoch])
        if out_dir is not None and spec.save_checkpoints:
            ckpt_dir = os.path.join(out_dir, "cells", key)
            os.makedirs(ckpt_dir, exist_ok=True)
            ckpt_path = os.path.join(ckpt_dir, f"{metric.key.replace('@', '_')}.ckpt")
            save_checkpoint(
                result.best_history.checkpoints[epoch], ckpt_path, seed=base.seed
            )
            record["checkpoints"][metric.key] = os.path.relpath(ckpt_path, out_dir)
    if out_dir is not None:
        diag_rows = [
            (d["epoch"],) + tuple(fmt_float(v) for k, v in sorted(d.items()) if k != "epoch")
            for d in result.best_history.diagnostics
        ]
        diag_keys = sorted(k for k in (result.best_history.diagnostics or [{}])[0] if k != "epoch")
        os.makedirs(os.path.join(out_dir, "cells", key), exist_ok=True)
        write_csv(
            os.path.join(out_dir, "cells", key, "training_log.csv"),
            ("epoch", *diag_keys),
            diag_rows,
        )
    return record


def _cell_worker(args):
    spec_dict, cell, out_dir = args
    spec = GridSpec.from_dict(spec_dict)
    record = run_cell(spec, cell, out_dir)
    if out_dir is not None:
        write_json(os.path.join(out_dir, "cells", f"{record['key']}.json"), record)
    return record


def run_grid(spec: GridSpec, out_dir=None, workers: int = 1, resume: bool = True) -> list:
    """Run every cell (skipping cached ones), then assemble the result table.

    Failed cells are recorded with their reason and do not stop the grid.
    Worker count never changes the output: records are keyed and sorted.
    """
    cells = spec.cells()
    records = {}
    pending = []
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)
        write_json(os.path.join(out_dir, "grid_manifest.json"), spec.to_dict())
    for cell in cells:
        key = spec.cell_key(cell)
        cache = None if out_dir is None else os.path.join(out_dir, "cells", f"{key}.json")
        if resume and cache is not None and os.path.exists(cache):
            records[key] = read_json(cache)
        else:
            pending.append((spec.to_dict(), cell, out_dir))
    if pending:
        if workers <= 1:
            finished = [_cell_worker(args) for args in pending]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                finished = list(pool.map(_cell_worker, pending))
        for record in finished:
            records[record["key"]] = record

    rows = []
    failures = []
    for cell in cells:
        record = records[spec.cell_key(cell)]
        if record["failed"]:
            failures.append((record["key"], *[cell[c] for c in ("dataset", "split_id", "nsr", "paradigm", "loss")], record["failed"]))
            continue
        for metric_key, value, epoch in record["rows"]:
            rows.append(
                GridResultRow(
                    dataset=cell["dataset"],
                    split_id=cell["split_id"],
                    nsr=cell["nsr"],
                    paradigm=cell["paradigm"],
                    loss=cell["loss"],
                    eval_metric=metric_key,
                    value=float(value),
                    best_epoch=int(epoch),
                    learning_rate=float(record["learning_rate"]),
                )
            )
    rows.sort()
    if out_dir is not None:
        save_results(rows, os.path.join(out_dir, "results.csv"))
        write_csv(
            os.path.join(out_dir, "failures.csv"),
            ("key", "dataset", "split_id", "nsr", "paradigm", "loss", "reason"),
            [(k, d, s, fmt_float(n), pa, lo, r) for k, d, s, n, pa, lo, r in failures],
        )
    return rows


def save_results(rows, path) -> None:
    write_csv(path, RESULT_COLUMNS, [r.to_csv_row() for r in sorted(rows)])


def load_results(path) -> list:
    import csv

    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != list(RESULT_COLUMNS):
            raise DataError(f"unexpected results header: {header}")
        for rec in reader:
            rows.append(
                GridResultRow(
                    dataset=rec[0],
                    split_id=int(rec[1]),
                    nsr=float(rec[2]),
                    paradigm=rec[3],
                    loss=rec[4],
                    eval_metric=rec[5],
                    value=float(rec[6]),
                    best_epoch=int(rec[7]),
                    learning_rate=float(rec[8]),
                )
            )
    return rows


@dataclass(order=True, frozen=True)
class StandardizedRow:
    row: GridResultRow
    z_value: float
    degenerate: bool = False


def standardize(rows) -> list:
    """Z-score values within each (dataset, NSR, evaluation metric) group.

    Uses the population standard deviation, so each group comes out with
    mean 0 and (population) standard deviation exactly 1. A zero-variance
    group gets z = 0 everywhere and is flagged as degenerate.
    """
    groups = {}
    for row in rows:
        groups.setdefault((row.dataset, row.nsr, row.eval_metric), []).append(row)
    out = []
    for key in sorted(groups):
        members = groups[key]
        if len(members) < 2:
            raise DataError(f"standardization group {key} has fewer than 2 rows")
        values = np.array([r.value for r in members])
        std = float(values.std())
        if std == 0.0:
            out.extend(StandardizedRow(row=r, z_value=0.0, degenerate=True) for r in members)
        else:
            mean = float(values.mean())
            out.extend(
                StandardizedRow(row=r, z_value=(r.value - mean) / std) for r in members
            )
    return sorted(out)


def save_standardized(std_rows, path) -> None:
    write_csv(
        path,
        RESULT_COLUMNS + ("z_value", "degenerate"),
        [
            s.row.to_csv_row() + (fmt_float(s.z_value), int(s.degenerate))
            for s in sorted(std_rows)
        ],
    )


def best_loss_frequency(rows) -> list:
    """How often each loss attains the best value, per evaluation metric.

    Counts run over every (split, NSR) cell of a (dataset, paradigm,
    evaluation metric) group; exact ties credit all tied losses, so counts
    can sum to more than the number of cells. An incomplete grid is an
    error.
    """
    groups = {}
    for row in rows:
        key = (row.dataset, row.paradigm, row.eval_metric)
        groups.setdefault(key, {}).setdefault((row.split_id, row.nsr), {})[row.loss] = row.value
    missing = []
    counts = []
    for key in sorted(groups):
        cells = groups[key]
        losses = sorted({loss for cell in cells.values() for loss in cell})
        tally = {loss: 0 for loss in losses}
        for cell_key in sorted(cells):
            cell = cells[cell_key]
            for loss in losses:
                if loss not in cell:
                    missing.append((*key, *cell_key, loss))
            if len(missing) == 0:
                best = max(cell.values())
                for loss, value in cell.items():
                    if value == best:
                        tally[loss] += 1
        for loss in losses:
            counts.append((*key, loss, tally[loss]))
    if missing:
        raise DataError(f"grid incomplete; missing cells: {missing[:10]}" + ("..." if len(missing) > 10 else ""))
    return counts


def save_frequency(counts, path) -> None:
    write_csv(
        path,
        ("dataset", "paradigm", "eval_metric", "loss", "count"),
        [(d, pa, m, lo, c) for d, pa, m, lo, c in sorted(counts, key=lambda t: (t[0], t[1], t[2], t[3]))],
    )


def per_user_diff(model_a: FactorModel, model_b: FactorModel, split, eval_metric: MetricKind) -> list:
    """Per-user metric difference (a minus b) with the user's training activity.

    Both models must live in the same index space and be evaluated on the
    same split.
    """
    if (model_a.n_users, model_a.n_items) != (model_b.n_users, model_b.n_items):
        raise ValueError("models cover different user/item spaces")
    if split.n_users != model_a.n_users:
        raise ValueError("split does not match the models' user space")
    if split.test_neg is None:
        raise DataError("split has no sampled test negatives")
    out = []
    for user in range(split.n_users):
        pos, neg = split.test_pos[user], split.test_neg[user]
        if pos.size == 0:
            continue
        items = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(pos.size, np.int8), np.zeros(neg.size, np.int8)])
        value_a = evaluate_user(RankedList.from_scores(model_a.scores(user, items), labels, items), eval_metric)
        value_b = evaluate_user(RankedList.from_scores(model_b.scores(user, items), labels, items), eval_metric)
        out.append((user, int(split.train_pos[user].size), value_a - value_b))
    return out


def save_per_user_diff(records, path, context=()) -> None:
    """Context columns (name, value) pairs are prepended to every row."""
    names = tuple(n for n, _ in context)
    values = tuple(v for _, v in context)
    write_csv(
        path,
        names + ("user", "train_positives", "diff"),
        [values + (u, m, fmt_float(d)) for u, m, d in records],
    )


def summarize(std_rows, n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> list:
    """Mean standardized score per (paradigm, loss, metric) with bootstrap CI.

    Percentile intervals from seeded resampling; a single-row group collapses
    to its point value.
    """
    groups = {}
    for s in std_rows:
        groups.setdefault((s.row.paradigm, s.row.loss, s.row.eval_metric), []).append(s.z_value)
    alpha = (1.0 - level) / 2.0
    out = []
    for key in sorted(groups):
        values = np.array(groups[key])
        rng = np.random.default_rng(subseed("bootstrap", seed, *key))
        resamples = rng.choice(values, size=(n_boot, values.size), replace=True)
        means = resamples.mean(axis=1)
        lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
        out.append((*key, float(values.mean()), float(lo), float(hi), values.size))
    return out


def save_summary(summary_rows, path) -> None:
    write_csv(
        path,
        ("paradigm", "loss", "eval_metric", "mean_z", "ci_low", "ci_high", "n"),
        [
            (pa, lo, m, fmt_float(mz), fmt_float(cl), fmt_float(ch), n)
            for pa, lo, m, mz, cl, ch, n in summary_rows
        ],
    )
