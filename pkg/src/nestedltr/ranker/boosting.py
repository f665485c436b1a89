"""Gradient-boosted ranking trees with validation early stopping."""
from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numba
import numpy as np

from ..core import LabelKind
from ..labeling import RankingDataset
from .objectives import group_dcg, lambda_gradients_grouped, pointwise_gradients
from .tree import Tree, apply_bins, grow_tree, quantile_bin_edges

logger = logging.getLogger(__name__)

MODEL_FORMAT = "nestedltr-model"
MODEL_VERSION = 1
OBJECTIVES = ("lambdarank", "pointwise")


@dataclass
class TrainConfig:
    objective: str = "lambdarank"
    num_trees_max: int = 300
    max_depth: int = 6
    min_examples_per_leaf: int = 20
    learning_rate: float = 0.1
    histogram_bins: int = 64
    scale_pos_weight: Union[float, str] = "auto"
    early_stopping_patience: int = 50
    early_stopping_k: int = 10
    sigma: float = 1.0
    l2_reg: float = 1.0
    min_split_gain: float = 0.0
    lambda_k: Optional[int] = None
    feature_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.num_trees_max < 0:
            raise ValueError("num_trees_max must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_examples_per_leaf < 1:
            raise ValueError("min_examples_per_leaf must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 2 <= self.histogram_bins <= 256:
            raise ValueError("histogram_bins must lie in [2, 256]")
        if self.early_stopping_patience < 1:
            raise ValueError("early_stopping_patience must be >= 1")
        if self.early_stopping_k < 1:
            raise ValueError("early_stopping_k must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")
        if self.lambda_k is not None and self.lambda_k < 1:
            raise ValueError("lambda_k must be >= 1 or None")
        if not 0 < self.feature_fraction <= 1:
            raise ValueError("feature_fraction must lie in (0, 1]")
        spw = self.scale_pos_weight
        if isinstance(spw, str):
            if spw != "auto":
                raise ValueError("scale_pos_weight must be a positive number or 'auto'")
        elif not float(spw) > 0:
            raise ValueError("scale_pos_weight must be a positive number or 'auto'")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@numba.njit(cache=True)
def _predict_forest(X, offsets, feature, threshold, left, right, value, out):
    for t in range(offsets.shape[0] - 1):
        base = offsets[t]
        for r in range(X.shape[0]):
            node = 0
            while feature[base + node] != -1:
                if X[r, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[r] += value[base + node]


@dataclass
class BoostedRanker:
    """``score(x) = base_score + learning_rate * sum(tree(x))``."""

    trees: List[Tree]
    learning_rate: float
    base_score: float
    objective: str
    n_features: int
    bin_edges: List[np.ndarray] = field(default_factory=list)
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._packed = None

    def _pack(self):
        if self._packed is None:
            sizes = [t.n_nodes for t in self.trees]
            offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
            cat = lambda attr, dt: (np.concatenate([getattr(t, attr) for t in self.trees]).astype(dt)
                                    if self.trees else np.zeros(0, dt))
            self._packed = (offsets, cat("feature", np.int64), cat("threshold", np.float64),
                            cat("left", np.int64), cat("right", np.int64), cat("value", np.float64))
        return self._packed

    def raw_sum(self, X) -> np.ndarray:
        X = self._check(X)
        out = np.zeros(len(X))
        _predict_forest(X, *self._pack(), out)
        return out

    def predict(self, X) -> np.ndarray:
        return self.base_score + self.learning_rate * self.raw_sum(X)

    def score(self, features) -> float:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("score expects one feature vector")
        return float(self.predict(x[None, :])[0])

    def _check(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        return X

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    # persistence -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "objective": self.objective,
            "n_features": self.n_features,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "bin_edges": [e.tolist() for e in self.bin_edges],
            "trees": [t.to_dict() for t in self.trees],
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedRanker":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            learning_rate=d["learning_rate"],
            base_score=d["base_score"],
            objective=d["objective"],
            n_features=d["n_features"],
            bin_edges=[np.array(e, dtype=np.float64) for e in d["bin_edges"]],
            training_meta=d["training_meta"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "BoostedRanker":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "BoostedRanker":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def score(model: BoostedRanker, features) -> float:
    return model.score(features)


def resolve_pos_weight(spw, positive: np.ndarray) -> float:
    if spw != "auto":
        return float(spw)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 1.0
    return n_neg / n_pos


def fit(train: RankingDataset, validation: RankingDataset, label, config: Optional[TrainConfig] = None,
        callback=None) -> BoostedRanker:
    """Boost trees on `label`, keeping the snapshot with the best validation DCG@k.

    Training stops once `early_stopping_patience` consecutive trees fail to
    improve mean validation DCG (gains taken from the same label).
    """
    config = config or TrainConfig()
    config.validate()
    label = LabelKind.parse(label)
    if len(train) == 0 or len(validation) == 0:
        raise ValueError("train and validation splits must be non-empty")
    if train.n_features != validation.n_features:
        raise ValueError("train and validation feature counts differ")
    y = train.label(label)
    y_val = validation.label(label)
    k_es = config.early_stopping_k
    bounds = train.group_bounds()
    val_bounds = validation.group_bounds()

    spw = resolve_pos_weight(config.scale_pos_weight, train.positive)
    weights = np.where(train.positive, spw, 1.0)
    if config.objective == "pointwise":
        base = float(np.average(y, weights=weights))
    else:
        base = 0.0

    meta = {
        "label": label.value,
        "seed": config.seed,
        "config": config.to_dict(),
        "scale_pos_weight": spw,
        "status": "ok",
    }

    def val_metric(raw):
        scores = base + config.learning_rate * raw
        return float(group_dcg(val_bounds, scores, validation.item_id, y_val, k_es).mean())

    val_raw = np.zeros(len(validation))
    best_dcg = val_metric(val_raw)
    best_iter = 0
    history = [best_dcg]

    edges = quantile_bin_edges(train.features, config.histogram_bins)
    trees: List[Tree] = []

    if np.all(y == y[0]):
        warnings.warn(f"all training labels for {label.value} are identical; returning a constant model")
        meta.update(status="degenerate", iterations=0, best_iteration=0, best_validation_dcg=best_dcg,
                    validation_history=history)
        return BoostedRanker([], config.learning_rate, base, config.objective, train.n_features, edges, meta)

    binned = apply_bins(train.features, edges)
    rng = np.random.default_rng([config.seed % 2**63, 0xB0057])
    train_raw = np.zeros(len(train))
    n_feat = train.n_features
    n_sub = max(1, int(round(config.feature_fraction * n_feat)))
    lambda_k = config.lambda_k

    it = 0
    for it in range(1, config.num_trees_max + 1):
        scores = base + config.learning_rate * train_raw
        if config.objective == "lambdarank":
            grad, hess = lambda_gradients_grouped(bounds, scores, y, lambda_k, config.sigma,
                                                  train.item_id, weights)
        else:
            grad, hess = pointwise_gradients(scores, y, weights)
        mask = np.ones(n_feat, dtype=np.bool_)
        if n_sub < n_feat:
            mask[:] = False
            mask[rng.choice(n_feat, size=n_sub, replace=False)] = True
        tree, row_value = grow_tree(binned, grad, hess, edges, config.max_depth, config.min_examples_per_leaf,
                                    config.l2_reg, config.min_split_gain, mask)
        trees.append(tree)
        train_raw += row_value
        val_raw += tree.predict(validation.features)
        dcg = val_metric(val_raw)
        history.append(dcg)
        if callback is not None:
            callback(it, dcg)
        if dcg > best_dcg:
            best_dcg, best_iter = dcg, it
        elif it - best_iter >= config.early_stopping_patience:
            break

    meta.update(iterations=it, best_iteration=best_iter, best_validation_dcg=best_dcg,
                validation_history=history)
    logger.info("fit %s: %d trees (stopped at %d), validation DCG@%d %.5f",
                label.value, best_iter, it, k_es, best_dcg)
    return BoostedRanker(trees[:best_iter], config.learning_rate, base, config.objective, n_feat, edges, meta)
