"""Pairwise training: logistic pair costs scaled by metric swap deltas.

For every (relevant, irrelevant) training pair, the gradient magnitude is the
metric change a rank swap of the pair would cause, times the derivative of a
logistic pair cost in score space. Accumulated per user, applied once per
user per epoch.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import TrainingError
from .factors import FactorModel, SgdConfig, apply_score_gradients
from .metrics import MetricKind, exact_ranks, ideal_dcg
from .util import subseed

PAIRWISE_KINDS = ("rr", "ap", "ndcg", "nrbp")


def pair_cost(s: int, o: float) -> float:
    """Logistic cost of a pair with label sign s and score gap o.

    Equals -s*o + ln(1 + e^(s*o)), computed as softplus(-s*o) so large gaps
    cannot overflow.
    """
    return float(np.logaddexp(0.0, -s * np.float64(o)))

def cost_derivative(s: int, o: float) -> float:
    """Derivative of ``pair_cost`` with respect to o: -s / (1 + e^(s*o))."""
    return float(-s * expit(-s * np.float64(o)))


def swap_delta(kind: MetricKind, ranks, labels, i: int, j: int, m: int | None = None) -> float:
    """Absolute metric change if items at positions i and j traded ranks.

    Only defined for unequal labels; callers enumerate (relevant, irrelevant)
    pairs and skip the rest.
    """
    ranks = np.asarray(ranks, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int8)
    if labels[i] == labels[j]:
        raise ValueError("swap_delta requires a pair with unequal labels")
    if labels[i] == 1:
        pos_idx, neg_idx = i, j
    else:
        pos_idx, neg_idx = j, i
    if m is None:
        m = int(labels.sum())
    r_pos = float(ranks[pos_idx])
    r_neg = float(ranks[neg_idx])

    if kind.kind == "ndcg":
        return abs(1.0 / np.log2(r_pos + 1.0) - 1.0 / np.log2(r_neg + 1.0)) / ideal_dcg(m)
    if kind.kind in ("rbp", "nrbp"):
        p = kind.p
        delta = (1.0 - p) * abs(p ** (r_pos - 1.0) - p ** (r_neg - 1.0))
        if kind.kind == "nrbp":
            delta /= 1.0 - p**m
        return float(delta)
    pos_ranks = np.sort(ranks[labels == 1]).astype(np.float64)
    if kind.kind == "rr":
        first = pos_ranks[0]
        without = pos_ranks[1] if (r_pos == first and m > 1) else (np.inf if r_pos == first else first)
        new_first = min(without, r_neg)
        return abs(1.0 / first - 1.0 / new_first)
    if kind.kind == "ap":
        inv_prefix = np.concatenate([[0.0], np.cumsum(1.0 / pos_ranks)])
        c_pos = int(np.searchsorted(pos_ranks, r_pos, side="right"))
        c_neg = int(np.searchsorted(pos_ranks, r_neg, side="right"))
        h_pos, h_neg = inv_prefix[c_pos], inv_prefix[c_neg]
        if r_pos < r_neg:
            # relevant item moves down; ranks in between lose one hit above them
            change = c_neg / r_neg - c_pos / r_pos - (h_neg - h_pos)
        else:
            change = (c_neg + 1) / r_neg - c_pos / r_pos + (h_pos - 1.0 / r_pos - h_neg)
        return abs(change) / m
    raise ValueError(f"no swap delta for metric kind {kind.kind!r}")


@dataclass
class PairContext:
    """One training pair within a user's ranked candidate list."""

    s: int
    o: float
    ranks: np.ndarray
    labels: np.ndarray
    i: int
    j: int


def lambda_gradient(kind: MetricKind, ctx: PairContext) -> float:
    """Score-space ascent contribution for item i (item j receives the negative)."""
    delta = swap_delta(kind, ctx.ranks, ctx.labels, ctx.i, ctx.j)
    return ctx.s * abs(delta * cost_derivative(ctx.s, ctx.o))


def _delta_matrix(kind: MetricKind, pos_ranks, neg_ranks, m: int) -> np.ndarray:
    """Swap deltas for all (relevant, irrelevant) pairs at once."""
    a = pos_ranks.astype(np.float64)[:, None]
    b = neg_ranks.astype(np.float64)[None, :]
    if kind.kind == "ndcg":
        return np.abs(1.0 / np.log2(a + 1.0) - 1.0 / np.log2(b + 1.0)) / ideal_dcg(m)
    if kind.kind == "nrbp":
        p = kind.p
        return (1.0 - p) / (1.0 - p**m) * np.abs(p ** (a - 1.0) - p ** (b - 1.0))
    if kind.kind == "rr":
        sorted_pos = np.sort(pos_ranks.astype(np.float64))
        first = sorted_pos[0]
        second = sorted_pos[1] if m > 1 else np.inf
        without = np.where(a == first, second, first)
        new_first = np.minimum(without, b)
        return np.abs(1.0 / first - 1.0 / new_first)
    if kind.kind == "ap":
        sorted_pos = np.sort(pos_ranks.astype(np.float64))
        inv_prefix = np.concatenate([[0.0], np.cumsum(1.0 / sorted_pos)])
        c_pos = np.searchsorted(sorted_pos, pos_ranks, side="right").astype(np.float64)[:, None]
        c_neg = np.searchsorted(sorted_pos, neg_ranks, side="right").astype(np.float64)[None, :]
        h_pos = inv_prefix[c_pos.astype(np.int64)]
        h_neg = inv_prefix[c_neg.astype(np.int64)]
        down = c_neg / b - c_pos / a - (h_neg - h_pos)
        up = (c_neg + 1.0) / b - c_pos / a + (h_pos - 1.0 / a - h_neg)
        return np.abs(np.where(a < b, down, up)) / m
    raise ValueError(f"no swap delta for metric kind {kind.kind!r}")


def train_epoch_pairwise(
    model: FactorModel, split, kind: MetricKind, cfg: SgdConfig, epoch: int = 0
) -> dict:
    """One pass over all users in a seeded random order.

    Every (relevant, irrelevant) pair contributes +lambda to the relevant
    item's accumulated gradient and -lambda to the irrelevant item's; each
    user gets one factor update. Returns epoch diagnostics.
    """
    if kind.kind not in PAIRWISE_KINDS:
        raise ValueError(f"pairwise training supports {PAIRWISE_KINDS}, got {kind.kind!r}")
    rng = np.random.default_rng(subseed("pairwise-epoch", cfg.seed, epoch))
    order = rng.permutation(split.n_users)
    total_abs_lambda = 0.0
    total_pairs = 0
    for user in order:
        user = int(user)
        items, labels = split.train_candidates(user)
        n_pos = int(labels.sum())
        if n_pos == 0 or n_pos == labels.size:
            continue
        scores = model.scores(user, items)
        if not np.all(np.isfinite(scores)):
            raise TrainingError("non-finite scores", epoch=epoch, user=user)
        ranks = exact_ranks(scores, item_ids=items)
        pos_mask = labels == 1
        delta = _delta_matrix(kind, ranks[pos_mask], ranks[~pos_mask], n_pos)
        gap = scores[pos_mask][:, None] - scores[~pos_mask][None, :]
        lam = delta * expit(-gap)  # |delta * dC/do| with the relevant item first
        if not np.all(np.isfinite(lam)):
            raise TrainingError("non-finite pair gradient", epoch=epoch, user=user)
        g = np.zeros(labels.size)
        g[pos_mask] = lam.sum(axis=1)
        g[~pos_mask] = -lam.sum(axis=0)
        apply_score_gradients(model, user, items, g, cfg, epoch=epoch)
        total_abs_lambda += float(np.abs(lam).sum())
        total_pairs += lam.size
    return {
        "pairs": total_pairs,
        "mean_abs_lambda": total_abs_lambda / total_pairs if total_pairs else 0.0,
    }
