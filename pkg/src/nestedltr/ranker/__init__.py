"""Boosted regression-tree rankers."""
from .boosting import BoostedRanker, TrainConfig, fit, score
from .objectives import delta_dcg, lambda_gradients, pairwise_surrogate_loss
from .search import hyperparameter_search
from .tree import Tree

__all__ = [
    "BoostedRanker",
    "TrainConfig",
    "Tree",
    "delta_dcg",
    "fit",
    "hyperparameter_search",
    "lambda_gradients",
    "pairwise_surrogate_loss",
    "score",
]
