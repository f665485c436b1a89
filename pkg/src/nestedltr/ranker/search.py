"""Seeded random search over boosting hyperparameters."""
from __future__ import annotations

import csv
import logging
import math
from typing import Dict, List, Tuple

import numpy as np

from ..core import LabelKind
from .boosting import BoostedRanker, TrainConfig, fit

logger = logging.getLogger(__name__)

SEARCHABLE = ("learning_rate", "max_depth", "num_trees_max", "min_examples_per_leaf")
_LOG_SCALE = {"learning_rate"}
TRIAL_COLUMNS = ("trial",) + SEARCHABLE + ("n_trees", "iterations", "validation_dcg")


def _check_space(space: dict):
    """An empty space is allowed: every trial then uses the base config."""
    unknown = set(space) - set(SEARCHABLE)
    if unknown:
        raise ValueError(f"unsearchable parameters: {sorted(unknown)}")
    for name, spec in space.items():
        if isinstance(spec, dict):
            if set(spec) != {"choices"} or not spec["choices"]:
                raise ValueError(f"{name}: a dict entry must be {{'choices': [...]}} with at least one value")
        elif isinstance(spec, (list, tuple)):
            if len(spec) != 2 or spec[0] > spec[1]:
                raise ValueError(f"{name}: a range must be [low, high] with low <= high")
            if name in _LOG_SCALE and spec[0] <= 0:
                raise ValueError(f"{name}: log-scale range must be positive")


def _draw(name, spec, rng):
    if isinstance(spec, dict):
        choices = spec["choices"]
        return choices[int(rng.integers(len(choices)))]
    if isinstance(spec, (list, tuple)):
        lo, hi = spec
        if isinstance(lo, int) and isinstance(hi, int):
            return int(rng.integers(lo, hi + 1))
        if name in _LOG_SCALE:
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        return float(rng.uniform(lo, hi))
    return spec


def sample_configs(space: dict, n_trials: int, seed: int, base: TrainConfig) -> List[TrainConfig]:
    _check_space(space)
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng([seed % 2**63, 0x5EA4C])
    out = []
    for _ in range(n_trials):
        drawn = {name: _draw(name, space[name], rng) for name in SEARCHABLE if name in space}
        out.append(base.replace(**drawn))
    return out


def hyperparameter_search(train, validation, label, space: dict, n_trials: int = 1, seed: int = 0,
                          base_config: TrainConfig = None) -> Tuple[TrainConfig, List[Dict], BoostedRanker]:
    """Train one model per sampled config; keep the best by validation DCG@k.

    Ties go to fewer trees, then shallower depth, then the earlier trial.
    Returns the winning config, the trial log and the winning model.
    """
    base_config = base_config or TrainConfig()
    label = LabelKind.parse(label)
    configs = sample_configs(space, n_trials, seed, base_config)
    trials, models = [], []
    for i, cfg in enumerate(configs):
        model = fit(train, validation, label, cfg)
        meta = model.training_meta
        dcg = meta["best_validation_dcg"]
        row = {"trial": i}
        row.update({name: getattr(cfg, name) for name in SEARCHABLE})
        row.update(n_trees=model.n_trees, iterations=meta["iterations"], validation_dcg=dcg)
        trials.append(row)
        models.append(model)
        logger.info("trial %d/%d %s: %s", i + 1, n_trials, label.value, row)
    best = min(range(len(trials)), key=lambda i: (-trials[i]["validation_dcg"], trials[i]["n_trees"],
                                                 trials[i]["max_depth"], i))
    return configs[best], trials, models[best]


def write_trial_log(trials: List[Dict], path, comment: str = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.DictWriter(fh, fieldnames=TRIAL_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in trials:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_trial_log(path) -> List[Dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))
