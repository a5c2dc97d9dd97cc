"""Exact ranking metrics over binary-relevance candidate lists.

Ranks are 1-based. An item's rank is one plus the number of items with a
strictly greater score; ties are broken by ascending item id so ranks always
form a permutation.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .util import fmt_float, write_csv
from .validation import check_labels, check_persistence, check_scores

METRIC_KINDS = ("rr", "ap", "ndcg", "rbp", "nrbp")
_NEEDS_P = ("rbp", "nrbp")


@dataclass(frozen=True)
class MetricKind:
    """A metric identity, plus the persistence parameter where one applies."""

    kind: str
    p: float | None = None

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind in _NEEDS_P:
            if self.p is None:
                raise ValueError(f"{self.kind} requires a persistence p")
            object.__setattr__(self, "p", check_persistence(self.p))
        elif self.p is not None:
            raise ValueError(f"{self.kind} does not take a persistence p")

    @property
    def key(self) -> str:
        if self.p is None:
            return self.kind
        return f"{self.kind}@{self.p:g}"

    def __str__(self):
        return self.key

    @classmethod
    def parse(cls, text: str) -> "MetricKind":
        """Parse keys like ``"ndcg"`` or ``"nrbp@0.95"``."""
        if "@" in text:
            kind, _, p = text.partition("@")
            return cls(kind, float(p))
        return cls(text)


#: The six evaluation metrics of the standard protocol.
PROTOCOL_METRICS = (
    MetricKind("rr"),
    MetricKind("ap"),
    MetricKind("ndcg"),
    MetricKind("nrbp", 0.8),
    MetricKind("nrbp", 0.9),
    MetricKind("nrbp", 0.95),
)


def exact_ranks(scores, item_ids=None) -> np.ndarray:
    """Rank of each item: 1 + count of strictly better scores, id tie-break."""
    scores = check_scores(scores)
    n = scores.shape[0]
    if item_ids is None:
        item_ids = np.arange(n, dtype=np.int64)
    else:
        item_ids = np.asarray(item_ids, dtype=np.int64)
        if item_ids.shape != scores.shape:
            raise ValueError("item_ids must match scores in length")
        if np.unique(item_ids).size != n:
            raise ValueError("item_ids must be unique")
    greater = scores[None, :] > scores[:, None]
    tied_lower_id = (scores[None, :] == scores[:, None]) & (item_ids[None, :] < item_ids[:, None])
    return 1 + (greater | tied_lower_id).sum(axis=1).astype(np.int64)


@dataclass
class RankedList:
    """A user's candidate list: binary labels, scores, and derived ranks."""

    labels: np.ndarray
    scores: np.ndarray
    ranks: np.ndarray

    @classmethod
    def from_scores(cls, scores, labels, item_ids=None) -> "RankedList":
        scores = check_scores(scores)
        labels = check_labels(labels, n=scores.shape[0])
        return cls(labels=labels, scores=scores, ranks=exact_ranks(scores, item_ids))

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def m(self) -> int:
        """Number of relevant items in the list."""
        return int(self.labels.sum())

    def positive_ranks(self) -> np.ndarray:
        return self.ranks[self.labels == 1]


def _require_positives(ranked: RankedList):
    if ranked.m < 1:
        raise ValueError("metric evaluation requires at least one relevant item")


def ideal_dcg(m: int) -> float:
    """DCG of m relevant items occupying ranks 1..m."""
    return float(np.sum(1.0 / np.log2(np.arange(1, m + 1) + 1.0)))


def ndcg(ranked: RankedList) -> float:
    """Discounted cumulative gain over relevant items, divided by the ideal.

    Binary relevance collapses the 2^y - 1 gain to y, so only relevant
    items contribute 1 / log2(rank + 1).
    """
    _require_positives(ranked)
    pos = ranked.positive_ranks()
    dcg = np.sum(1.0 / np.log2(pos + 1.0))
    return float(dcg / ideal_dcg(ranked.m))


def average_precision(ranked: RankedList) -> float:
    """Mean over relevant items of precision at that item's rank."""
    _require_positives(ranked)
    pos = np.sort(ranked.positive_ranks())
    hits = np.arange(1, pos.size + 1, dtype=np.float64)
    return float(np.mean(hits / pos))


def reciprocal_rank(ranked: RankedList) -> float:
    """Inverse rank of the highest-ranked relevant item."""
    _require_positives(ranked)
    return float(1.0 / ranked.positive_ranks().min())


def rbp(ranked: RankedList, p: float) -> float:
    """(1 - p) * sum over relevant items of p^(rank - 1).

    Models a user who moves from one rank to the next with persistence p;
    tops out at 1 - p^m rather than 1.
    """
    _require_positives(ranked)
    p = check_persistence(p)
    pos = ranked.positive_ranks()
    return float((1.0 - p) * np.sum(p ** (pos - 1.0)))


def nrbp(ranked: RankedList, p: float) -> float:
    """RBP normalized by its maximum given m relevant items: rbp / (1 - p^m)."""
    _require_positives(ranked)
    p = check_persistence(p)
    return rbp(ranked, p) / (1.0 - p ** ranked.m)


def evaluate_user(ranked: RankedList, kind: MetricKind) -> float:
    if kind.kind == "rr":
        return reciprocal_rank(ranked)
    if kind.kind == "ap":
        return average_precision(ranked)
    if kind.kind == "ndcg":
        return ndcg(ranked)
    if kind.kind == "rbp":
        return rbp(ranked, kind.p)
    if kind.kind == "nrbp":
        return nrbp(ranked, kind.p)
    raise ValueError(f"unknown metric kind {kind.kind!r}")


@dataclass
class EvalReport:
    """Per-user metric values plus the unweighted mean across users."""

    per_user: dict = field(default_factory=dict)
    aggregates: dict = field(default_factory=dict)
    skipped_users: list = field(default_factory=list)

    def to_rows(self):
        """Rows (user, metric, p, value); aggregate rows carry an empty user."""
        rows = []
        for key in sorted(self.per_user):
            kind = MetricKind.parse(key)
            p_text = "" if kind.p is None else f"{kind.p:g}"
            for user in sorted(self.per_user[key]):
                rows.append((user, kind.kind, p_text, fmt_float(self.per_user[key][user])))
            rows.append(("", kind.kind, p_text, fmt_float(self.aggregates[key])))
        return rows

    def save(self, path):
        write_csv(path, ("user", "metric", "p", "value"), self.to_rows())


def evaluate_all(model, split, kinds=PROTOCOL_METRICS) -> EvalReport:
    """Evaluate a factor model on each user's test candidate list.

    Users without test candidates or without a relevant test item cannot be
    scored and are excluded from the means, recorded in ``skipped_users``.
    """
    if split.test_neg is None:
        raise DataError("split has no sampled test negatives")
    report = EvalReport(per_user={k.key: {} for k in kinds})
    for user in range(len(split.test_pos)):
        pos = split.test_pos[user]
        neg = split.test_neg[user]
        if pos.size == 0:
            report.skipped_users.append(user)
            continue
        items = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(pos.size, np.int8), np.zeros(neg.size, np.int8)])
        scores = model.scores(user, items)
        ranked = RankedList.from_scores(scores, labels, item_ids=items)
        for kind in kinds:
            report.per_user[kind.key][user] = evaluate_user(ranked, kind)
    for kind in kinds:
        values = report.per_user[kind.key]
        if not values:
            raise DataError("no evaluable users in split")
        report.aggregates[kind.key] = float(np.mean(list(values.values())))
    return report
