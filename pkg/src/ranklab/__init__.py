"""Learning-to-rank matrix factorization with direct IR metric optimization."""

from .data import (
    InteractionSet,
    RawRatings,
    SplitAssignment,
    binarize_and_filter,
    generate_synthetic,
    load_interactions,
    sample_negatives,
    split_train_test,
)
from .estimators import ListwiseRanker, PairwiseRanker
from .factors import FactorModel, SgdConfig, init_model, load_checkpoint, save_checkpoint
from .metrics import (
    PROTOCOL_METRICS,
    EvalReport,
    MetricKind,
    RankedList,
    average_precision,
    evaluate_all,
    evaluate_user,
    exact_ranks,
    ndcg,
    nrbp,
    rbp,
    reciprocal_rank,
)
from .training import TrainConfig, TrainHistory, lr_search, select_best, select_best_model, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "FactorModel",
    "InteractionSet",
    "ListwiseRanker",
    "MetricKind",
    "PairwiseRanker",
    "PROTOCOL_METRICS",
    "RankedList",
    "RawRatings",
    "SgdConfig",
    "SplitAssignment",
    "TrainConfig",
    "TrainHistory",
    "average_precision",
    "binarize_and_filter",
    "evaluate_all",
    "evaluate_user",
    "exact_ranks",
    "generate_synthetic",
    "init_model",
    "load_checkpoint",
    "load_interactions",
    "lr_search",
    "ndcg",
    "nrbp",
    "rbp",
    "reciprocal_rank",
    "sample_negatives",
    "save_checkpoint",
    "select_best",
    "select_best_model",
    "split_train_test",
    "train",
]
