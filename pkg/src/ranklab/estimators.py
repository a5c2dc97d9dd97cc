"""Scikit-learn style estimators wrapping the training engines.

Both rankers factorize the interaction matrix by optimizing a ranking metric
on each user's training candidates, then keep the checkpoint of the best
evaluated epoch. They follow the sklearn parameter protocol (`get_params`,
`set_params`, `clone`), so they compose with model-selection tooling.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .metrics import PROTOCOL_METRICS, MetricKind, evaluate_all, exact_ranks
from .training import TrainConfig, select_best, select_best_model, train


class _BaseRankerMF(BaseEstimator):
    _paradigm: str = ""

    def __init__(
        self,
        loss="ndcg",
        p=None,
        learning_rate=0.01,
        epochs=100,
        eval_every=10,
        n_factors=32,
        l2=0.0,
        init_std=0.1,
        random_state=0,
        eval_metric=None,
    ):
        self.loss = loss
        self.p = p
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.eval_every = eval_every
        self.n_factors = n_factors
        self.l2 = l2
        self.init_std = init_std
        self.random_state = random_state
        self.eval_metric = eval_metric

    def _config(self) -> TrainConfig:
        return TrainConfig(
            paradigm=self._paradigm,
            loss=self.loss,
            p=self.p,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            eval_every=self.eval_every,
            seed=self.random_state,
            n_factors=self.n_factors,
            l2=self.l2,
            init_std=self.init_std,
        )

    def _selection_metric(self) -> MetricKind:
        if self.eval_metric is not None:
            return MetricKind.parse(self.eval_metric)
        return self._config().target_metric()

    def fit(self, interactions, split):
        """Train on the split's candidates and keep the best-epoch factors.

        ``interactions`` fixes the user/item index spaces; ``split`` supplies
        per-user train/test positives and sampled negatives.
        """
        config = self._config()
        history = train(config, split, interactions)
        metric = self._selection_metric()
        self.history_ = history
        self.best_epoch_, self.best_value_ = select_best(history, metric)
        _, model = select_best_model(history, metric)
        self.user_factors_ = model.user_factors
        self.item_factors_ = model.item_factors
        self.n_users_ = model.n_users
        self.n_items_ = model.n_items
        return self

    def _model(self):
        from .factors import FactorModel

        check_is_fitted(self, "user_factors_")
        return FactorModel(self.user_factors_, self.item_factors_)

    def predict(self, user, items=None) -> np.ndarray:
        """Relevance scores for one user, over all items by default."""
        model = self._model()
        if items is None:
            items = np.arange(self.n_items_)
        return model.scores(int(user), items)

    def rank_items(self, user, items) -> np.ndarray:
        """1-based ranks of the given candidate items for one user."""
        return exact_ranks(self.predict(user, items), item_ids=np.asarray(items))

    def score(self, split, metric=None) -> float:
        """Mean value of a metric over the split's test candidates."""
        kind = MetricKind.parse(metric) if metric is not None else self._selection_metric()
        report = evaluate_all(self._model(), split, kinds=(kind,))
        return report.aggregates[kind.key]

    def evaluate(self, split, metrics=PROTOCOL_METRICS):
        return evaluate_all(self._model(), split, kinds=metrics)


class PairwiseRanker(_BaseRankerMF):
    """Matrix factorization trained on pair swaps weighted by metric deltas.

    ``loss`` is one of rr, ap, ndcg, nrbp; nrbp requires a persistence ``p``.
    """

    _paradigm = "pairwise"


class ListwiseRanker(_BaseRankerMF):
    """Matrix factorization trained on smoothed whole-list metric surrogates.

    ``loss`` is one of rr, ap, ndcg, nrbp; the nrbp rank-position loss takes
    no persistence, but best-epoch selection can target any ``eval_metric``
    (nrbp@0.95 by default).
    """

    _paradigm = "listwise"
