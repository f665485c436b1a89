"""Ranking primitives shared by every other module.

Positions are 1-based throughout. The examination curve of the
position-based model doubles as the DCG discount, which is what lets DCG
act as an offline estimate of expected online reward.
"""
from __future__ import annotations

import enum
import math
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np

SIGNAL_NAMES = ("likes", "shares", "favs", "clicks")


class LabelKind(str, enum.Enum):
    """Label columns a ranking dataset can carry."""

    S1 = "s1"
    S2 = "s2"
    S3 = "s3"
    LIKES = "likes"
    SHARES = "shares"
    FAVS = "favs"
    CLICKS = "clicks"

    @property
    def column(self) -> str:
        return f"label_{self.value}"

    @property
    def is_synthetic(self) -> bool:
        return self in SYNTHETIC_LABELS

    @classmethod
    def parse(cls, value: "str | LabelKind") -> "LabelKind":
        if isinstance(value, LabelKind):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown label kind {value!r}") from None


SYNTHETIC_LABELS = (LabelKind.S1, LabelKind.S2, LabelKind.S3)
RAW_LABELS = (LabelKind.LIKES, LabelKind.SHARES, LabelKind.FAVS, LabelKind.CLICKS)
ALL_LABELS = SYNTHETIC_LABELS + RAW_LABELS


@dataclass(frozen=True)
class Position:
    """A 1-based rank."""

    index: int

    def __post_init__(self):
        if isinstance(self.index, bool) or int(self.index) != self.index:
            raise TypeError(f"position index must be an integer, got {self.index!r}")
        if self.index < 1:
            raise ValueError(f"position index must be >= 1, got {self.index}")


@dataclass(frozen=True)
class SignalVector:
    likes: int = 0
    shares: int = 0
    favs: int = 0
    clicks: int = 0

    def __post_init__(self):
        for name in SIGNAL_NAMES:
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def any(self) -> bool:
        return any(astuple(self))


@dataclass(frozen=True)
class ScalarizationWeights:
    """Linear weights turning raw signals into a scalar relevance."""

    likes: float = 1.0
    shares: float = 1.0
    favs: float = 1.0
    clicks: float = 1.0

    def __post_init__(self):
        values = astuple(self)
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ValueError(f"scalarization weights must be finite and >= 0, got {values}")
        if not any(v > 0 for v in values):
            raise ValueError("at least one scalarization weight must be positive")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarizationWeights":
        unknown = set(d) - set(SIGNAL_NAMES)
        if unknown:
            raise ValueError(f"unknown scalarization weight keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return dict(zip(SIGNAL_NAMES, astuple(self)))


def _position_index(pos) -> int:
    if isinstance(pos, Position):
        return pos.index
    return Position(pos).index


def examination_probability(pos) -> float:
    """Probability that a user looks at rank `pos`, ``1 / log2(1 + pos)``."""
    return 1.0 / math.log2(1 + _position_index(pos))


def discounts(n: int) -> np.ndarray:
    """Examination probabilities for ranks 1..n as an array."""
    return 1.0 / np.log2(np.arange(2, n + 2, dtype=np.float64))


def dcg_at_k(gains: Sequence[float], k: int) -> float:
    """Discounted cumulative gain of `gains` (already in rank order) cut at `k`.

    Gains enter linearly; no exponential transform is applied.
    """
    gains = np.asarray(gains, dtype=np.float64)
    if gains.ndim != 1 or gains.size == 0:
        raise ValueError("gains must be a non-empty 1-d sequence")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if np.any(gains < 0) or not np.all(np.isfinite(gains)):
        raise ValueError("gains must be finite and non-negative")
    top = gains[: min(k, gains.size)]
    return float(np.dot(top, discounts(top.size)))


def scalarize(signals, weights: ScalarizationWeights) -> float:
    if isinstance(signals, SignalVector):
        signals = signals.as_array()
    return float(np.dot(np.asarray(signals, dtype=np.float64), weights.as_array()))


def debias(observed_reward: float, pos) -> float:
    """Inverse-propensity estimate of the reward given that `pos` was examined."""
    if observed_reward < 0:
        raise ValueError(f"observed reward must be >= 0, got {observed_reward}")
    return observed_reward / examination_probability(pos)
