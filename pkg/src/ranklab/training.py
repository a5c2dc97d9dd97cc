"""Training runs: epoch loop, periodic evaluation, best-epoch selection.

A run evaluates the six protocol metrics on the test candidates at epoch 0,
every ``eval_every`` epochs, and at the final epoch. Model selection happens
afterwards: for each evaluation metric, the evaluated epoch with the highest
aggregate wins (earliest on ties). A single rank-position listwise run can
therefore be queried at several persistence values, yielding one best epoch
per value.

Divergence (non-finite scores or gradients) is a recorded outcome, not a
crash: the history is marked and grid searches skip it.
"""

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from .data import SplitAssignment
from .errors import GridError, TrainingError
from .factors import FactorModel, SgdConfig, init_model
from .listwise import LISTWISE_KINDS, train_epoch_listwise
from .metrics import PROTOCOL_METRICS, EvalReport, MetricKind, evaluate_all
from .pairwise import PAIRWISE_KINDS, train_epoch_pairwise
from .util import fmt_float, write_csv

PARADIGMS = ("pairwise", "listwise")
PAIRWISE_LR_GRID = (0.001, 0.01, 0.1)
LISTWISE_LR_GRID = (0.001, 0.01, 0.1, 1.0, 3.0, 10.0)
#: Persistence used to pick epochs/rates for the persistence-free listwise loss.
DEFAULT_SELECT_P = 0.95


@dataclass
class TrainConfig:
    paradigm: str
    loss: str
    p: float | None = None
    learning_rate: float = 0.01
    epochs: int = 3000
    eval_every: int = 10
    seed: int = 0
    n_factors: int = 32
    l2: float = 0.0
    init_std: float = 0.1

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise ValueError(f"paradigm must be one of {PARADIGMS}, got {self.paradigm!r}")
        kinds = PAIRWISE_KINDS if self.paradigm == "pairwise" else LISTWISE_KINDS
        if self.loss not in kinds:
            raise ValueError(f"{self.paradigm} losses are {kinds}, got {self.loss!r}")
        if self.paradigm == "pairwise" and self.loss == "nrbp":
            if self.p is None:
                raise ValueError("pairwise nrbp requires a persistence p")
        elif self.p is not None:
            # the listwise rank-position loss is persistence-free by construction
            raise ValueError(f"{self.paradigm} {self.loss} does not take a persistence p")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")

    @property
    def loss_key(self) -> str:
        if self.p is not None:
            return f"{self.loss}@{self.p:g}"
        return self.loss

    def target_metric(self) -> MetricKind:
        """Evaluation metric used to select epochs/rates for this loss."""
        if self.loss == "nrbp":
            return MetricKind("nrbp", self.p if self.p is not None else DEFAULT_SELECT_P)
        return MetricKind(self.loss)

    def sgd(self) -> SgdConfig:
        return SgdConfig(
            learning_rate=self.learning_rate, l2=self.l2, seed=self.seed, init_std=self.init_std
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    config: TrainConfig | None
    evaluated_epochs: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    diverged: bool = False
    divergence: str | None = None

    def aggregate(self, epoch: int, metric: MetricKind) -> float:
        report = self.reports[epoch]
        if metric.key not in report.aggregates:
            raise KeyError(f"metric {metric.key} was not evaluated in this history")
        return report.aggregates[metric.key]

    def to_rows(self):
        rows = []
        for epoch in self.evaluated_epochs:
            report = self.reports[epoch]
            for key in sorted(report.aggregates):
                kind = MetricKind.parse(key)
                p_text = "" if kind.p is None else f"{kind.p:g}"
                rows.append((epoch, kind.kind, p_text, fmt_float(report.aggregates[key])))
        return rows

    def save(self, path):
        """Aggregate trajectory as rows (epoch, metric, p, value)."""
        write_csv(path, ("epoch", "metric", "p", "value"), self.to_rows())

    @classmethod
    def load(cls, path) -> "TrainHistory":
        """Rebuild an aggregates-only history; selection works as before saving."""
        history = cls(config=None)
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for epoch_text, metric, p_text, value in reader:
                epoch = int(epoch_text)
                key = metric if not p_text else f"{metric}@{float(p_text):g}"
                if epoch not in history.reports:
                    history.reports[epoch] = EvalReport()
                    history.evaluated_epochs.append(epoch)
                history.reports[epoch].aggregates[key] = float(value)
        return history


def _model_is_finite(model: FactorModel) -> bool:
    return bool(np.all(np.isfinite(model.user_factors)) and np.all(np.isfinite(model.item_factors)))


def train(
    config: TrainConfig,
    split: SplitAssignment,
    interactions,
    eval_metrics=PROTOCOL_METRICS,
    keep_checkpoints: bool = True,
) -> TrainHistory:
    """Run one configuration to completion (or divergence)."""
    model = init_model(
        interactions.n_users, interactions.n_items, config.n_factors, config.seed, config.init_std
    )
    sgd = config.sgd()
    history = TrainHistory(config=config)

    def record(epoch: int):
        history.evaluated_epochs.append(epoch)
        history.reports[epoch] = evaluate_all(model, split, eval_metrics)
        if keep_checkpoints:
            history.checkpoints[epoch] = model.copy()

    record(0)
    for epoch in range(1, config.epochs + 1):
        try:
            if config.paradigm == "pairwise":
                stats = train_epoch_pairwise(model, split, config.target_metric(), sgd, epoch=epoch)
            else:
                stats = train_epoch_listwise(model, split, config.loss, sgd, epoch=epoch)
        except TrainingError as exc:
            history.diverged = True
            history.divergence = str(exc)
            break
        history.diagnostics.append({"epoch": epoch, **stats})
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            if not _model_is_finite(model):
                history.diverged = True
                history.divergence = f"non-finite factors at epoch {epoch}"
                break
            record(epoch)
    return history


def select_best(history: TrainHistory, eval_metric: MetricKind) -> tuple[int, float]:
    """Evaluated epoch with the highest aggregate value; earliest wins ties."""
    if not history.evaluated_epochs:
        raise ValueError("history has no evaluated epochs")
    best_epoch, best_value = None, -np.inf
    for epoch in history.evaluated_epochs:
        value = history.aggregate(epoch, eval_metric)
        if value > best_value:
            best_epoch, best_value = epoch, value
    return best_epoch, float(best_value)


def select_best_model(history: TrainHistory, eval_metric: MetricKind) -> tuple[int, FactorModel]:
    epoch, _ = select_best(history, eval_metric)
    if epoch not in history.checkpoints:
        raise ValueError(f"no checkpoint kept for epoch {epoch}")
    return epoch, history.checkpoints[epoch].copy()


@dataclass
class LrSearchResult:
    best_config: TrainConfig
    best_history: TrainHistory
    attempts: list  # (learning_rate, best_value or None, diverged)


def lr_search(
    base_config: TrainConfig,
    split: SplitAssignment,
    interactions,
    grid=None,
    target_metric: MetricKind | None = None,
    eval_metrics=PROTOCOL_METRICS,
    keep_checkpoints: bool = True,
) -> LrSearchResult:
    """Train once per rate; keep the rate whose best epoch scores highest.

    Rates are tried in ascending order and only strict improvements replace
    the incumbent, so ties go to the smaller rate. Diverged runs are recorded
    and skipped; if every rate diverges the search fails.
    """
    if grid is None:
        grid = PAIRWISE_LR_GRID if base_config.paradigm == "pairwise" else LISTWISE_LR_GRID
    if not grid:
        raise ValueError("learning-rate grid is empty")
    if target_metric is None:
        target_metric = base_config.target_metric()
    attempts = []
    best = None
    for rate in sorted(grid):
        config = TrainConfig.from_dict({**base_config.to_dict(), "learning_rate": rate})
        history = train(config, split, interactions, eval_metrics, keep_checkpoints)
        if history.diverged:
            attempts.append((rate, None, True))
            continue
        _, value = select_best(history, target_metric)
        attempts.append((rate, value, False))
        if best is None or value > best[0]:
            best = (value, config, history)
    if best is None:
        raise GridError(
            f"all learning rates diverged for {base_config.paradigm}/{base_config.loss_key}"
        )
    return LrSearchResult(best_config=best[1], best_history=best[2], attempts=attempts)
