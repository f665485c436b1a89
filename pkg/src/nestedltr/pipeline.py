"""In-memory pipeline stages shared by the command line and the demos."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig
from .core import ALL_LABELS, SYNTHETIC_LABELS, LabelKind
from .evaluation import (
    DEGENERATE_NOTICE,
    EvaluationMatrix,
    OnlineReport,
    build_matrix,
    offline_ordering_checks,
    online_compare,
    online_ordering_checks,
)
from .labeling import RankingDataset, build_dataset, negative_sample, stratified_split
from .ranker.boosting import BoostedRanker
from .ranker.search import hyperparameter_search
from .simulator import NestedSessionLog, World, build_world, simulate_logs

logger = logging.getLogger(__name__)


@dataclass
class LogSummary:
    sessions: int
    impressions: int
    positive: int
    clicks: int

    @property
    def positive_rate(self) -> float:
        return self.positive / self.impressions if self.impressions else 0.0

    @property
    def click_through_rate(self) -> float:
        return self.clicks / self.impressions if self.impressions else 0.0

    def render(self) -> str:
        return (f"sessions: {self.sessions}\nimpressions: {self.impressions}\n"
                f"positive rate: {self.positive_rate:.6f}\nclick-through rate: {self.click_through_rate:.6f}\n")


def summarize_logs(logs: Sequence[NestedSessionLog]) -> LogSummary:
    """Positive rate = share of first-level impressions with any signal; CTR = clicks per impression."""
    sessions = impressions = positive = clicks = 0
    for log in logs:
        sessions += 1
        impressions += log.n
        positive += int(np.any(log.l1_obs > 0, axis=1).sum())
        clicks += int(log.l1_obs[:, -1].sum())
    return LogSummary(sessions, impressions, positive, clicks)


def simulate(cfg: RunConfig) -> Tuple[World, List[NestedSessionLog]]:
    world = build_world(cfg.world, cfg.world_seed)
    logs = list(simulate_logs(world, cfg.n_sessions, cfg.seed("simulate")))
    return world, logs


def prepare(cfg: RunConfig, world: World, logs: Sequence[NestedSessionLog],
            debias_l1: Optional[bool] = None) -> Tuple[RankingDataset, RankingDataset, RankingDataset]:
    debias = cfg.debias_l1 if debias_l1 is None else debias_l1
    ds = build_dataset(world, logs, cfg.weights_l1, cfg.weights_l2, debias)
    if len(ds) == 0 or not ds.positive.any():
        raise ValueError("logs contain no positive examples")
    ds = negative_sample(ds, cfg.positive_rate_target, cfg.seed("negative_sample"))
    return stratified_split(ds, cfg.split_ratios, cfg.seed("split"))


def train_label(cfg: RunConfig, train: RankingDataset, validation: RankingDataset, label,
                provenance: Optional[dict] = None) -> Tuple[BoostedRanker, List[dict]]:
    """Search and fit one label's model.  Every label uses the same search seed,
    so all labels see the same candidate configs (an equal budget)."""
    label = LabelKind.parse(label)
    _, trials, model = hyperparameter_search(train, validation, label, cfg.space, cfg.n_trials,
                                             cfg.seed("search"), cfg.train_config())
    if provenance:
        model.training_meta["provenance"] = provenance
    return model, trials


def train_all(cfg: RunConfig, train: RankingDataset, validation: RankingDataset,
              labels: Sequence = ALL_LABELS, provenance: Optional[dict] = None):
    return {LabelKind.parse(k): train_label(cfg, train, validation, k, provenance) for k in labels}


def offline(cfg: RunConfig, models: Dict, test: RankingDataset) -> EvaluationMatrix:
    return build_matrix(models, test, cfg.ks)


def online(cfg: RunConfig, world: World, models: Dict) -> OnlineReport:
    return online_compare(world, {k: models[k] for k in SYNTHETIC_LABELS}, cfg.weights_l1, cfg.weights_l2,
                          cfg.online_sessions, cfg.seeds_online(), cfg.candidate_size, cfg.alpha)


def ordering_checks(world: World, matrix: Optional[EvaluationMatrix] = None,
                    report: Optional[OnlineReport] = None) -> Tuple[List[str], bool]:
    """Human-readable check lines and overall pass flag.

    A world without a second-level feed makes the three labels identical, so
    there is no ordering to check; the notice is emitted instead.
    """
    if world.l2_size == 0:
        return [DEGENERATE_NOTICE], True
    results = []
    if matrix is not None:
        results += offline_ordering_checks(matrix)
    if report is not None:
        results += online_ordering_checks(report)
    lines = [f"{'PASS' if ok else 'FAIL'}  {desc}" for desc, ok in results]
    return lines, all(ok for _, ok in results)
