"""From session logs to grouped ranking datasets.

Each first-level impression becomes one example whose group is its session.
Three synthetic labels are attached:

* ``s1``: scalarized first-level reward only;
* ``s2``: ``s1`` plus the second-level rewards discounted by their position;
* ``s3``: ``s1`` plus the plain sum of second-level rewards.

Second-level rewards are already thinned by examination under the fixed
second-level ranking, so their plain sum is the correct estimate of the
item's downstream contribution; discounting them again double-counts
position bias.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ALL_LABELS,
    RAW_LABELS,
    LabelKind,
    ScalarizationWeights,
    discounts,
)
from .simulator import CLICK, NestedSessionLog, World

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
_RAW_COLUMNS = [ALL_LABELS.index(k) for k in RAW_LABELS]


# --------------------------------------------------------------------------
# labels


def label_matrix(log: NestedSessionLog, weights_l1: ScalarizationWeights, weights_l2: ScalarizationWeights,
                 debias_l1: bool = False) -> np.ndarray:
    """Label columns for every first-level slot of `log`, ordered as ``ALL_LABELS``."""
    log.validate()
    r_a = log.l1_obs @ weights_l1.as_array()
    if debias_l1:
        # examined positions only carry signal, so dividing by the propensity is safe
        r_a = r_a / discounts(log.n)
    r_b = log.l2_obs @ weights_l2.as_array()
    s2 = r_a + r_b @ discounts(log.m)
    s3 = r_a + r_b.sum(axis=1)
    out = np.empty((log.n, len(ALL_LABELS)))
    out[:, 0] = r_a
    out[:, 1] = s2
    out[:, 2] = s3
    out[:, 3:] = log.l1_obs
    return out


def make_labels(log: NestedSessionLog, weights_l1: ScalarizationWeights, weights_l2: ScalarizationWeights,
                debias_l1: bool = False) -> List[Dict[LabelKind, float]]:
    """Per first-level item, a map from label kind to label value."""
    mat = label_matrix(log, weights_l1, weights_l2, debias_l1)
    return [dict(zip(ALL_LABELS, map(float, row))) for row in mat]


# --------------------------------------------------------------------------
# features


def feature_names(world: World) -> List[str]:
    cfg = world.config
    d = world.user_latent.shape[1]
    return (
        [f"user_latent_{i}" for i in range(d)]
        + [f"item_latent_{i}" for i in range(d)]
        + ["user_item_dot", "item_popularity"]
        + [f"genre_{g}" for g in range(cfg.n_genres)]
        + ["user_fatigue", "user_signup_recency"]
        + [f"language_{k}" for k in range(cfg.n_languages)]
        + ["l2_affinity", "l2_popularity"]
    )


def feature_matrix(world: World, users, items) -> np.ndarray:
    """Feature rows for aligned arrays of user and item ids (any matching shape)."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.shape != items.shape:
        raise ValueError("users and items must have the same shape")
    if users.size and (users.min() < 0 or users.max() >= world.n_users):
        raise KeyError("unknown user id")
    if items.size and (items.min() < 0 or items.max() >= world.n_items):
        raise KeyError("unknown item id")
    cfg = world.config
    u = users.ravel()
    a = items.ravel()
    ul = world.user_latent[u]
    il = world.item_latent[a]
    cols = [
        ul,
        il,
        np.einsum("nd,nd->n", ul, il)[:, None],
        world.item_popularity[a][:, None],
        np.eye(cfg.n_genres)[world.item_genre[a]],
        world.user_fatigue[u][:, None],
        world.user_signup_recency[u][:, None],
        np.eye(cfg.n_languages)[world.user_language[u]],
    ]
    if world.l2_size:
        attached = world.l2_attachment[a]
        centroid = world.item_latent[attached].mean(axis=1)
        cols.append(np.einsum("nd,nd->n", ul, centroid)[:, None])
        cols.append(np.log(world.item_popularity[attached]).mean(axis=1)[:, None])
    else:
        cols.append(np.zeros((len(u), 2)))
    return np.hstack(cols).reshape(users.shape + (-1,))


def extract_features(world: World, user: int, item: int) -> np.ndarray:
    return feature_matrix(world, np.array([user]), np.array([item]))[0]


# --------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class LabeledExample:
    group_id: int
    item_id: int
    features: np.ndarray
    labels: Dict[LabelKind, float]


@dataclass
class RankingDataset:
    """Examples stored column-wise, contiguous by group.

    `labels` has one column per entry of ``ALL_LABELS``.
    """

    group_id: np.ndarray
    item_id: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    feature_names: Tuple[str, ...]
    split: str = "all"

    def __post_init__(self):
        self.group_id = np.asarray(self.group_id, dtype=np.int64)
        self.item_id = np.asarray(self.item_id, dtype=np.int64)
        self.feature_names = tuple(self.feature_names)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(len(self.group_id),
                                                                           len(self.feature_names))
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(len(self.group_id), len(ALL_LABELS))
        if not np.all(np.isfinite(self.features)) or not np.all(np.isfinite(self.labels)):
            raise ValueError("dataset contains NaN or infinite values")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative")
        if len(self.group_id) and np.any(np.diff(self.group_id) != 0):
            change = np.flatnonzero(np.diff(self.group_id)) + 1
            starts = np.concatenate([[0], change])
            if len(np.unique(self.group_id[starts])) != len(starts):
                raise ValueError("examples of a group must be contiguous")

    def __len__(self):
        return len(self.group_id)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def label(self, kind) -> np.ndarray:
        return self.labels[:, ALL_LABELS.index(LabelKind.parse(kind))]

    @property
    def positive(self) -> np.ndarray:
        """Examples with any raw first-level signal."""
        return np.any(self.labels[:, _RAW_COLUMNS] > 0, axis=1)

    @property
    def positive_rate(self) -> float:
        return float(self.positive.mean()) if len(self) else 0.0

    def group_bounds(self) -> np.ndarray:
        """Start offsets of each group plus the final end offset."""
        if len(self) == 0:
            return np.zeros(1, dtype=np.int64)
        change = np.flatnonzero(np.diff(self.group_id)) + 1
        return np.concatenate([[0], change, [len(self)]]).astype(np.int64)

    @property
    def groups(self) -> np.ndarray:
        return self.group_id[self.group_bounds()[:-1]]

    def subset(self, mask_or_index, split: Optional[str] = None) -> "RankingDataset":
        return RankingDataset(self.group_id[mask_or_index], self.item_id[mask_or_index],
                              self.features[mask_or_index], self.labels[mask_or_index],
                              self.feature_names, split or self.split)

    def examples(self) -> Iterable[LabeledExample]:
        for r in range(len(self)):
            yield LabeledExample(int(self.group_id[r]), int(self.item_id[r]), self.features[r],
                                 dict(zip(ALL_LABELS, map(float, self.labels[r]))))

    # io -------------------------------------------------------------------

    def columns(self) -> List[str]:
        return (["group_id", "item_id"] + [f"feature_{i}" for i in range(self.n_features)]
                + [k.column for k in ALL_LABELS])

    def write_csv(self, path, comment: Optional[str] = None):
        data = np.hstack([self.group_id[:, None], self.item_id[:, None], self.features, self.labels])
        fmt = ["%d", "%d"] + ["%.17g"] * (self.n_features + len(ALL_LABELS))
        header = ",".join(self.columns())
        lines = [f"# split={self.split}"]
        if comment:
            lines.append(f"# {comment}")
        lines.append("# feature_names=" + ",".join(self.feature_names))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n" + header + "\n")
            if len(self):
                np.savetxt(fh, data, fmt=fmt, delimiter=",")

    @classmethod
    def read_csv(cls, path) -> "RankingDataset":
        split, names, header = "all", None, None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("# split="):
                    split = line.strip()[len("# split="):]
                elif line.startswith("# feature_names="):
                    names = line.strip()[len("# feature_names="):].split(",")
                elif not line.startswith("#"):
                    header = line.strip().split(",")
                    break
            if header is None:
                raise ValueError(f"{path}: missing header row")
            body = fh.read()
        if body.strip():
            data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2, dtype=np.float64)
        else:
            data = np.zeros((0, len(header)))
        n_feat = len(header) - 2 - len(ALL_LABELS)
        expected = (["group_id", "item_id"] + [f"feature_{i}" for i in range(n_feat)]
                    + [k.column for k in ALL_LABELS])
        if header != expected:
            raise ValueError(f"{path}: unexpected columns {header}")
        if names is None or len(names) != n_feat:
            names = [f"feature_{i}" for i in range(n_feat)]
        return cls(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2:2 + n_feat],
                   data[:, 2 + n_feat:], names, split)


def build_dataset(world: World, logs: Iterable[NestedSessionLog], weights_l1: ScalarizationWeights,
                  weights_l2: ScalarizationWeights, debias_l1: bool = False) -> RankingDataset:
    """Label every first-level impression of `logs`; one group per session."""
    gids, users, items, labels = [], [], [], []
    for log in logs:
        lab = label_matrix(log, weights_l1, weights_l2, debias_l1)
        gids.append(np.full(log.n, log.session_id, dtype=np.int64))
        users.append(np.full(log.n, log.user_id, dtype=np.int64))
        items.append(log.l1_slate)
        labels.append(lab)
    if not gids:
        return RankingDataset(np.zeros(0), np.zeros(0), np.zeros((0, len(feature_names(world)))),
                              np.zeros((0, len(ALL_LABELS))), feature_names(world))
    users = np.concatenate(users)
    items = np.concatenate(items)
    return RankingDataset(np.concatenate(gids), items, feature_matrix(world, users, items),
                          np.vstack(labels), feature_names(world))


def max_negatives(n_positive: int, target_positive_rate: float) -> int:
    """Largest negative count keeping the positive rate at or above the target."""
    x = int(math.floor(n_positive * (1.0 - target_positive_rate) / target_positive_rate))
    while n_positive / (n_positive + x) < target_positive_rate:
        x -= 1
    while n_positive / (n_positive + x + 1) >= target_positive_rate:
        x += 1
    return x


def negative_sample(dataset: RankingDataset, target_positive_rate: float = 0.05, seed: int = 0) -> RankingDataset:
    """Uniformly drop zero-signal examples until the positive rate reaches the target.

    Positives are always kept and nothing is upsampled.
    """
    if not 0.0 < target_positive_rate < 1.0:
        raise ValueError("target_positive_rate must lie in (0, 1)")
    pos = dataset.positive
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("no positive examples to anchor negative sampling")
    neg_idx = np.flatnonzero(~pos)
    limit = max_negatives(n_pos, target_positive_rate)
    if len(neg_idx) <= limit:
        return dataset
    rng = np.random.default_rng([seed % 2**63, 0xD0])
    keep = pos.copy()
    keep[rng.choice(neg_idx, size=limit, replace=False)] = True
    return dataset.subset(keep)


def _allocate(n: int, ratios: Sequence[float]) -> List[int]:
    return _round_targets(n, [n * r for r in ratios])


def _round_targets(n: int, raw: Sequence[float]) -> List[int]:
    """Largest-remainder rounding of real targets summing to `n`; every slot gets at least one."""
    counts = [int(math.floor(x)) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        while counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    return counts


def stratified_split(dataset: RankingDataset, ratios=(0.70, 0.15, 0.15), seed: int = 0):
    """Split by group into train/validation/test, stratified on whether a group has a positive."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    bounds = dataset.group_bounds()
    groups = dataset.groups
    if len(groups) < 3:
        raise ValueError("need at least 3 groups to split")
    pos = dataset.positive
    has_pos = np.add.reduceat(pos.astype(np.int64), bounds[:-1]) > 0 if len(dataset) else np.zeros(0, bool)
    rng = np.random.default_rng([seed % 2**63, 0x5B])
    assignment = np.empty(len(groups), dtype=np.int64)
    taken = np.zeros(3)
    for stratum in (True, False):
        idx = np.flatnonzero(has_pos == stratum)
        if idx.size == 0:
            continue
        if idx.size < 3:
            raise ValueError(f"stratum with {idx.size} group(s) cannot populate three splits")
        idx = idx[rng.permutation(idx.size)]
        if taken.any():
            # round toward the overall targets so split totals stay within one group
            target = np.clip(np.array(ratios) * len(groups) - taken, 0.0, None)
            counts = _round_targets(idx.size, target * idx.size / target.sum())
        else:
            counts = _allocate(idx.size, ratios)
        taken += counts
        assignment[idx] = np.repeat(np.arange(3), counts)
    row_split = np.repeat(assignment, np.diff(bounds))
    return tuple(dataset.subset(row_split == s, split=name) for s, name in enumerate(SPLITS))
