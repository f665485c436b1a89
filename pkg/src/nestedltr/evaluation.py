"""Offline cross-evaluation and simulated online comparison of rankers."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .core import ALL_LABELS, SYNTHETIC_LABELS, LabelKind, ScalarizationWeights
from .labeling import RankingDataset, feature_matrix
from .ranker.objectives import group_dcg
from .simulator import Policy, World, rollout, score_policy

logger = logging.getLogger(__name__)

DEFAULT_KS = (3, 5, 10)


def _scores(model, X: np.ndarray) -> np.ndarray:
    if hasattr(model, "predict"):
        return np.asarray(model.predict(X), dtype=np.float64)
    return np.asarray(model(X), dtype=np.float64)


def mean_group_dcg(model, dataset: RankingDataset, gain_label, k: int) -> float:
    """Mean DCG@k over groups, ranking by descending model score (ties: ascending item id).

    `model` is anything with ``predict(X)`` or a callable on the feature matrix.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    scores = _scores(model, dataset.features)
    gains = dataset.label(gain_label)
    return float(group_dcg(dataset.group_bounds(), scores, dataset.item_id, gains, k).mean())


def percent_loss(dcg_base: float, dcg_pred: float) -> float:
    if not dcg_base > 0:
        raise ValueError(f"baseline DCG must be positive, got {dcg_base}")
    return 100.0 * (dcg_base - dcg_pred) / dcg_base


# --------------------------------------------------------------------------
# offline matrix


@dataclass
class EvaluationMatrix:
    """``entries[k][predictor][truth]`` is the % DCG@k lost by ranking with the
    predictor's model instead of the model trained on the truth label."""

    ks: tuple
    predictors: tuple
    truths: tuple
    entries: Dict[int, Dict[str, Dict[str, float]]]
    dcg: Dict[int, Dict[str, Dict[str, float]]] = field(default_factory=dict)

    def loss(self, k: int, predictor, truth) -> float:
        return self.entries[k][LabelKind.parse(predictor).value][LabelKind.parse(truth).value]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "predictor"] + list(self.truths))
        for k in self.ks:
            for p in self.predictors:
                w.writerow([k, p] + [repr(self.entries[k][p][t]) for t in self.truths])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvaluationMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        truths = tuple(rows[0][2:])
        entries: Dict[int, Dict[str, Dict[str, float]]] = {}
        preds = []
        for row in rows[1:]:
            k, p = int(row[0]), row[1]
            if p not in preds:
                preds.append(p)
            entries.setdefault(k, {})[p] = {t: float(v) for t, v in zip(truths, row[2:])}
        return cls(tuple(entries), tuple(preds), truths, entries)

    def render(self) -> str:
        width = max(8, max(len(t) for t in self.truths) + 2)
        head = f"{'DCG@k':<7}{'label':<7}" + "".join(f"{t:>{width}}" for t in self.truths)
        lines = ["Offline % loss in DCG (rows: predictor label; columns: true relevance signal)",
                 head, "-" * len(head)]
        for k in self.ks:
            for i, p in enumerate(self.predictors):
                cells = "".join(f"{self.entries[k][p][t]:>{width}.1f}" for t in self.truths)
                lines.append(f"{(str(k) if i == 0 else ''):<7}{p.upper():<7}{cells}")
            lines.append("-" * len(head))
        return "\n".join(lines) + "\n"


def build_matrix(models: Mapping, test: RankingDataset, ks: Sequence[int] = DEFAULT_KS,
                 predictors: Sequence = SYNTHETIC_LABELS, truths: Sequence = ALL_LABELS) -> EvaluationMatrix:
    """Cross-evaluate predictor models against per-truth baseline models on `test`.

    `models` maps each label kind (predictors and truths) to its trained model.
    Negative entries mean the predictor beat the truth's own model.
    """
    models = {LabelKind.parse(k): v for k, v in models.items()}
    predictors = tuple(LabelKind.parse(p) for p in predictors)
    truths = tuple(LabelKind.parse(t) for t in truths)
    missing = [k.value for k in set(predictors) | set(truths) if k not in models]
    if missing:
        raise ValueError(f"missing models for labels: {sorted(missing)}")
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    bounds = test.group_bounds()
    scores = {k: _scores(models[k], test.features) for k in set(predictors) | set(truths)}
    entries: Dict[int, Dict[str, Dict[str, float]]] = {}
    dcg: Dict[int, Dict[str, Dict[str, float]]] = {}
    for k in ks:
        entries[k] = {p.value: {} for p in predictors}
        dcg[k] = {}
        for t in truths:
            gains = test.label(t)
            base = float(group_dcg(bounds, scores[t], test.item_id, gains, k).mean())
            dcg[k].setdefault(t.value, {})[t.value] = base
            for p in predictors:
                pred = base if p == t else float(group_dcg(bounds, scores[p], test.item_id, gains, k).mean())
                dcg[k][t.value][p.value] = pred
                entries[k][p.value][t.value] = percent_loss(base, pred)
    return EvaluationMatrix(tuple(ks), tuple(p.value for p in predictors), tuple(t.value for t in truths),
                            entries, dcg)


# --------------------------------------------------------------------------
# online comparison


@dataclass
class OnlineReport:
    variants: tuple
    seeds: tuple
    per_seed: Dict[str, List[dict]]
    summary: Dict[str, dict]
    comparisons: List[dict]
    alpha: float = 0.05

    def comparison(self, a: str, b: str) -> dict:
        for c in self.comparisons:
            if (c["a"], c["b"]) == (a, b):
                return c
        raise KeyError((a, b))

    def significantly_greater(self, a: str, b: str) -> bool:
        c = self.comparison(a, b)
        return c["significant"] and c["diff"] > 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "variant", "seed", "q_mean", "q_stderr", "l1_reward", "l2_reward", "clicks"])
        for v in self.variants:
            for row in self.per_seed[v]:
                w.writerow(["seed", v, row["seed"], repr(row["q_mean"]), repr(row["q_stderr"]),
                            repr(row["l1_reward"]), repr(row["l2_reward"]), repr(row["clicks"])])
        for v in self.variants:
            s = self.summary[v]
            w.writerow(["summary", v, "", repr(s["q_mean"]), repr(s["q_stderr"]), repr(s["l1_reward"]),
                        repr(s["l2_reward"]), repr(s["clicks"])])
        w.writerow([])
        w.writerow(["comparison", "a", "b", "diff", "t_stat", "p_value", "p_bonferroni", "significant"])
        for c in self.comparisons:
            w.writerow(["comparison", c["a"], c["b"], repr(c["diff"]), repr(c["t_stat"]), repr(c["p_value"]),
                        repr(c["p_bonferroni"]), int(c["significant"])])
        return buf.getvalue()

    def render(self, control: Optional[str] = None) -> str:
        control = control or self.variants[0]
        lines = [f"Simulated online metric over seeds {list(self.seeds)}",
                 f"{'variant':<10}{'Q':>10}{'stderr':>10}{'L1':>10}{'L2':>10}{'clicks':>10}{'gain %':>10}"]
        ctrl = self.summary[control]["q_mean"]
        for v in self.variants:
            s = self.summary[v]
            if v == control:
                gain = "-"
            else:
                c = self._find(v, control)
                mark = "" if c is not None and c["significant"] else "+"
                gain = f"{100 * (s['q_mean'] - ctrl) / ctrl:.2f}{mark}" if ctrl else "nan"
            lines.append(f"{v:<10}{s['q_mean']:>10.4f}{s['q_stderr']:>10.4f}{s['l1_reward']:>10.4f}"
                         f"{s['l2_reward']:>10.4f}{s['clicks']:>10.4f}{gain:>10}")
        lines.append(f"Welch t-tests, Bonferroni over {len(self.comparisons)} comparisons, alpha={self.alpha}"
                     " (+ marks a non-significant gain)")
        for c in self.comparisons:
            verdict = "significant" if c["significant"] else "not significant"
            lines.append(f"  {c['a']} vs {c['b']}: diff {c['diff']:+.4f}, "
                         f"p_bonf {c['p_bonferroni']:.3g} ({verdict})")
        return "\n".join(lines) + "\n"

    def _find(self, a, b):
        for c in self.comparisons:
            if {c["a"], c["b"]} == {a, b}:
                return c
        return None


def welch(a: Sequence[float], b: Sequence[float]):
    """Two-sided Welch t-test; degenerate zero-variance samples handled explicitly."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.var() == 0 and b.var() == 0:
        if a.mean() == b.mean():
            return 0.0, 1.0
        return math.copysign(math.inf, a.mean() - b.mean()), 0.0
    res = stats.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)


def compare_policies(world: World, policies: Mapping[str, Policy], weights_l1: ScalarizationWeights,
                     weights_l2: ScalarizationWeights, n_sessions: int, seeds: Sequence[int],
                     candidate_size: Optional[int] = None, alpha: float = 0.05,
                     pairs: Optional[Sequence[tuple]] = None) -> OnlineReport:
    """Run every policy on the same sessions per seed and test per-seed mean Q.

    `pairs` lists (a, b) comparisons; by default each later variant against
    every earlier one.  p-values are Bonferroni-corrected over `pairs`.
    """
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds for significance testing")
    names = tuple(policies)
    per_seed: Dict[str, List[dict]] = {v: [] for v in names}
    for seed in seeds:
        for v in names:
            r = rollout(world, policies[v], weights_l1, weights_l2, n_sessions, seed, candidate_size, chunk=5000)
            per_seed[v].append({"seed": seed, "q_mean": r.mean, "q_stderr": r.stderr,
                                "l1_reward": float(r.l1_reward.mean()), "l2_reward": float(r.l2_reward.mean()),
                                "clicks": float(r.clicks.mean())})
            logger.info("seed %d %s: Q %.4f (%.4f)", seed, v, r.mean, r.stderr)
    summary = {}
    for v in names:
        q = np.array([row["q_mean"] for row in per_seed[v]])
        summary[v] = {
            "q_mean": float(q.mean()),
            "q_stderr": float(q.std(ddof=1) / math.sqrt(len(q))),
            "l1_reward": float(np.mean([row["l1_reward"] for row in per_seed[v]])),
            "l2_reward": float(np.mean([row["l2_reward"] for row in per_seed[v]])),
            "clicks": float(np.mean([row["clicks"] for row in per_seed[v]])),
        }
    if pairs is None:
        pairs = [(names[j], names[i]) for i in range(len(names)) for j in range(i + 1, len(names))]
    comparisons = []
    for a, b in pairs:
        qa = [row["q_mean"] for row in per_seed[a]]
        qb = [row["q_mean"] for row in per_seed[b]]
        t, p = welch(qa, qb)
        p_bonf = min(1.0, p * len(pairs))
        comparisons.append({"a": a, "b": b, "diff": summary[a]["q_mean"] - summary[b]["q_mean"], "t_stat": t,
                            "p_value": p, "p_bonferroni": p_bonf, "significant": bool(p_bonf < alpha)})
    return OnlineReport(names, seeds, per_seed, summary, comparisons, alpha)


def model_policy(world: World, model, slate_size: Optional[int] = None) -> Policy:
    def score_fn(users, items):
        X = feature_matrix(world, users, items)
        return _scores(model, X.reshape(-1, X.shape[-1])).reshape(items.shape)
    return score_policy(score_fn, slate_size or world.slate_size)


def online_compare(world: World, models: Mapping, weights_l1: ScalarizationWeights,
                   weights_l2: ScalarizationWeights, n_sessions: int, seeds: Sequence[int],
                   candidate_size: Optional[int] = None, alpha: float = 0.05) -> OnlineReport:
    """Compare the S1/S2/S3 models online: S3 vs S2, S2 vs S1 and S3 vs S1."""
    models = {LabelKind.parse(k): v for k, v in models.items()}
    missing = [k.value for k in SYNTHETIC_LABELS if k not in models]
    if missing:
        raise ValueError(f"missing models for labels: {missing}")
    policies = {k.value: model_policy(world, models[k]) for k in SYNTHETIC_LABELS}
    pairs = [("s3", "s2"), ("s2", "s1"), ("s3", "s1")]
    return compare_policies(world, policies, weights_l1, weights_l2, n_sessions, seeds, candidate_size, alpha, pairs)


# --------------------------------------------------------------------------
# ordering checks


DEGENERATE_NOTICE = "degenerate world (no second-level feed): ordering checks skipped"


def offline_ordering_checks(matrix: EvaluationMatrix) -> List[tuple]:
    """(description, passed) pairs for the dominance pattern of the offline matrix."""
    checks = []
    for k in matrix.ks:
        for truth in ("s2", "s3"):
            if truth in matrix.truths:
                s3, s1 = matrix.loss(k, "s3", truth), matrix.loss(k, "s1", truth)
                checks.append((f"DCG@{k} true={truth}: loss S3 {s3:.2f} < loss S1 {s1:.2f}", s3 < s1))
        diag = [matrix.loss(k, p, p) for p in matrix.predictors if p in matrix.truths]
        checks.append((f"DCG@{k}: diagonal is zero", all(d == 0.0 for d in diag)))
    return checks


def online_ordering_checks(report: OnlineReport) -> List[tuple]:
    checks = []
    for a, b in (("s3", "s2"), ("s2", "s1")):
        c = report.comparison(a, b)
        checks.append((f"Q({a}) > Q({b}) significant (diff {c['diff']:+.4f}, p_bonf {c['p_bonferroni']:.3g})",
                       report.significantly_greater(a, b)))
    return checks
