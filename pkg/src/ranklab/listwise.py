"""Listwise training: smoothed ranks and differentiable metric surrogates.

The integer rank is replaced by R~_i = 1 + sum_{j != i} sigmoid(f_j - f_i),
which turns each metric into a smooth function of the scores. Losses are the
negated surrogates, except the rank-position loss (``nrbp``), which directly
sums the smoothed ranks of the relevant items and is independent of any
persistence parameter; its additive constant makes a perfect exact ranking
score zero for every user.

Gradients are derived analytically through the sigmoid chain rule; the test
suite checks them against central finite differences.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import TrainingError
from .factors import FactorModel, SgdConfig, apply_score_gradients
from .metrics import ideal_dcg
from .util import subseed
from .validation import check_labels, check_scores

LISTWISE_KINDS = ("rr", "ap", "ndcg", "nrbp")
_LN2 = float(np.log(2.0))


def smooth_ranks(scores) -> np.ndarray:
    """Differentiable rank estimate: 1 + sum of sigmoid score deficits."""
    scores = check_scores(scores)
    sig = _beats_matrix(scores)
    return 1.0 + sig.sum(axis=1)


def _beats_matrix(scores) -> np.ndarray:
    """sig[i, j] = sigmoid(f_j - f_i), zero diagonal."""
    diff = scores[None, :] - scores[:, None]
    sig = expit(diff)
    np.fill_diagonal(sig, 0.0)
    return sig


@dataclass
class SmoothedList:
    """Scores, binary labels, and the smoothed rank of every item."""

    scores: np.ndarray
    labels: np.ndarray
    smoothed_ranks: np.ndarray

    @classmethod
    def from_scores(cls, scores, labels) -> "SmoothedList":
        scores = check_scores(scores)
        labels = check_labels(labels, n=scores.shape[0])
        return cls(scores=scores, labels=labels, smoothed_ranks=smooth_ranks(scores))

    @property
    def m(self) -> int:
        return int(self.labels.sum())


def _require_positives(slist: SmoothedList):
    if slist.m < 1:
        raise ValueError("listwise losses require at least one relevant item")


def loss_ndcg(slist: SmoothedList) -> float:
    """Negative smoothed DCG over relevant items, divided by the ideal DCG."""
    _require_positives(slist)
    r = slist.smoothed_ranks[slist.labels == 1]
    return float(-np.sum(1.0 / np.log2(r + 1.0)) / ideal_dcg(slist.m))


def loss_ap(slist: SmoothedList) -> float:
    """Negative smoothed average precision.

    The hit count above each relevant item i is smoothed to
    1 + sum over other relevant j of sigmoid(f_j - f_i).
    """
    _require_positives(slist)
    pos = slist.labels == 1
    sig_pp = _beats_matrix(slist.scores)[np.ix_(pos, pos)]
    hits = 1.0 + sig_pp.sum(axis=1)
    return float(-np.mean(hits / slist.smoothed_ranks[pos]))


def loss_rr(slist: SmoothedList) -> float:
    """Negative smoothed reciprocal rank.

    Each relevant item's term is damped by the probability that no other
    relevant item outranks it, a product of sigmoid(f_i - f_j) factors.
    """
    _require_positives(slist)
    pos = slist.labels == 1
    f = slist.scores[pos]
    none_above = expit(f[:, None] - f[None, :])
    np.fill_diagonal(none_above, 1.0)
    return float(-np.sum(none_above.prod(axis=1) / slist.smoothed_ranks[pos]))


def loss_nrbp(slist: SmoothedList) -> float:
    """Sum of smoothed rank positions of relevant items, above the ideal.

    Zero when the m relevant items occupy exact ranks 1..m; carries no
    persistence parameter.
    """
    _require_positives(slist)
    m = slist.m
    excess = slist.smoothed_ranks[slist.labels == 1] - 1.0
    return float(excess.sum() - m * (m - 1) / 2.0)


_LOSS_FNS = {"rr": loss_rr, "ap": loss_ap, "ndcg": loss_ndcg, "nrbp": loss_nrbp}


def loss_value(kind: str, slist: SmoothedList) -> float:
    if kind not in _LOSS_FNS:
        raise ValueError(f"unknown listwise loss {kind!r}")
    return _LOSS_FNS[kind](slist)


def _loo_products(factors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row products and exact leave-one-column-out products via prefix scans."""
    m = factors.shape[0]
    ones = np.ones((m, 1))
    prefix = np.cumprod(factors, axis=1)
    suffix = np.cumprod(factors[:, ::-1], axis=1)[:, ::-1]
    left = np.concatenate([ones, prefix[:, :-1]], axis=1)
    right = np.concatenate([suffix[:, 1:], ones], axis=1)
    return prefix[:, -1], left * right


def loss_gradients(kind: str, slist: SmoothedList) -> np.ndarray:
    """Analytic gradient of the chosen loss with respect to every score."""
    _require_positives(slist)
    if kind not in _LOSS_FNS:
        raise ValueError(f"unknown listwise loss {kind!r}")
    scores, labels = slist.scores, slist.labels
    pos = labels == 1
    m = slist.m
    sig = _beats_matrix(scores)
    sens = sig * (1.0 - sig)  # d sigmoid, symmetric in the score gap
    np.fill_diagonal(sens, 0.0)
    ranks = slist.smoothed_ranks
    row_all = sens.sum(axis=1)

    if kind == "nrbp":
        return sens[pos].sum(axis=0) - np.where(pos, row_all, 0.0)

    if kind == "ndcg":
        # d/dr of 1/log2(r+1)
        w = np.zeros_like(scores)
        rp = ranks[pos]
        w[pos] = -_LN2 / ((rp + 1.0) * np.log(rp + 1.0) ** 2)
        return -(sens @ w - w * row_all) / ideal_dcg(m)

    if kind == "ap":
        hits = 1.0 + sig[np.ix_(pos, pos)].sum(axis=1)
        alpha = np.zeros_like(scores)
        beta = np.zeros_like(scores)
        alpha[pos] = 1.0 / ranks[pos]
        beta[pos] = hits / ranks[pos] ** 2
        row_pos = sens[:, pos].sum(axis=1)
        total = (
            np.where(pos, sens @ alpha, 0.0)
            - np.where(pos, alpha * row_pos, 0.0)
            + np.where(pos, beta * row_all, 0.0)
            - sens @ beta
        )
        return -total / m

    # rr: product terms need leave-one-out factors per relevant item
    f = scores[pos]
    none_above = expit(f[:, None] - f[None, :])
    np.fill_diagonal(none_above, 1.0)
    q, loo = _loo_products(none_above)
    inv_r = 1.0 / ranks[pos]
    b = q * inv_r**2
    sens_pp = sens[np.ix_(pos, pos)]
    w = sens_pp * loo
    grad = sens[pos].T @ b
    grad_pos = grad[pos] - b * row_all[pos] - inv_r * w.sum(axis=1) + w.T @ inv_r
    grad[pos] = grad_pos
    return grad


def train_epoch_listwise(model: FactorModel, split, kind: str, cfg: SgdConfig, epoch: int = 0) -> dict:
    """One seeded pass over all users: score, smooth, descend the loss."""
    if kind not in _LOSS_FNS:
        raise ValueError(f"unknown listwise loss {kind!r}")
    rng = np.random.default_rng(subseed("listwise-epoch", cfg.seed, epoch))
    order = rng.permutation(split.n_users)
    losses = []
    grad_norms = []
    for user in order:
        user = int(user)
        items, labels = split.train_candidates(user)
        if not labels.any():
            continue
        scores = model.scores(user, items)
        if not np.all(np.isfinite(scores)):
            raise TrainingError("non-finite scores", epoch=epoch, user=user)
        slist = SmoothedList.from_scores(scores, labels)
        grad = loss_gradients(kind, slist)
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite loss gradient", epoch=epoch, user=user)
        # descent on the loss through the ascent-convention update
        apply_score_gradients(model, user, items, -grad, cfg, epoch=epoch)
        losses.append(loss_value(kind, slist))
        grad_norms.append(float(np.linalg.norm(grad)))
    return {
        "mean_loss": float(np.mean(losses)) if losses else 0.0,
        "mean_grad_norm": float(np.mean(grad_norms)) if grad_norms else 0.0,
    }
