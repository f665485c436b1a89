"""Synthetic nested-feed worlds and a position-based user model.

A world holds users, items and, for every item, the fixed list of items a
user sees after clicking through to its second-level feed.  Sessions are
simulated with independent Bernoulli examination per position at both
levels; all randomness is drawn from a counter-based hash of
``(world seed, stream seed, user, session counter, position, event)`` so a
session can be replayed in isolation and a whole batch can be simulated in
one vectorised pass with identical results.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from .core import SIGNAL_NAMES, ScalarizationWeights, SignalVector, discounts

logger = logging.getLogger(__name__)

L2_SIGNALS = ("likes", "shares", "favs")
N_SIGNALS = len(SIGNAL_NAMES)
CLICK = SIGNAL_NAMES.index("clicks")

# event codes mixed into the hash; examination first, then one per signal
_EXAMINE = 0
_USER_DRAW = 101
_SESSION_KEY = 102


# --------------------------------------------------------------------------
# counter-based randomness

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x):
    with np.errstate(over="ignore"):
        x = np.asarray(x, dtype=np.uint64) + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


def hash_key(*parts) -> np.ndarray:
    """Chain-hash integer parts (broadcasting) into uint64 keys."""
    h = np.zeros((), dtype=np.uint64)
    for part in parts:
        h = _splitmix(h ^ _as_u64(part))
    return h


def _as_u64(part) -> np.ndarray:
    a = np.asarray(part)
    if a.dtype.kind == "i":
        return a.astype(np.int64).view(np.uint64)
    if a.dtype.kind == "u":
        return a.astype(np.uint64)
    raise TypeError(f"hash parts must be integers, got {a.dtype}")


def uniform(*parts) -> np.ndarray:
    """Uniform [0, 1) variates, one per broadcast element of `parts`."""
    h = hash_key(*parts)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


# --------------------------------------------------------------------------
# world


@dataclass
class WorldConfig:
    """Shape and ground-truth coefficients of a synthetic world."""

    n_users: int = 1000
    n_items: int = 5000
    slate_size: int = 20
    l2_size: int = 10
    latent_dim: int = 8
    n_genres: int = 6
    n_languages: int = 4
    dot_coef: float = 2.0
    genre_scale: float = 0.5
    popularity_coef: float = 0.8
    popularity_sigma: float = 0.75
    fatigue_coef: float = 0.8
    l1_bias: dict = field(default_factory=lambda: {"likes": 0.0, "shares": -1.0, "favs": -1.0, "clicks": -1.5})
    l2_bias: dict = field(default_factory=lambda: {"likes": -1.5, "shares": -2.5, "favs": -2.5})
    deep_fraction: float = 0.3
    deep_l1_penalty: float = 3.0
    deep_click_bonus: float = 2.0
    l2_pool_quantile: float = 0.3

    def __post_init__(self):
        self.l1_bias = dict(self.l1_bias)
        self.l2_bias = dict(self.l2_bias)
        self.validate()

    def validate(self):
        if self.slate_size < 1:
            raise ValueError(f"slate_size must be >= 1, got {self.slate_size}")
        if self.l2_size < 0:
            raise ValueError(f"l2_size must be >= 0, got {self.l2_size}")
        if self.n_users < 1 or self.n_items < 1:
            raise ValueError("user and item pools must be non-empty")
        if self.n_items < self.slate_size:
            raise ValueError("n_items must be at least slate_size")
        if self.l2_size and self.n_items <= self.l2_size:
            raise ValueError("n_items must exceed l2_size")
        if self.latent_dim < 1 or self.n_genres < 1 or self.n_languages < 1:
            raise ValueError("latent_dim, n_genres and n_languages must be >= 1")
        if set(self.l1_bias) != set(SIGNAL_NAMES):
            raise ValueError(f"l1_bias needs exactly the keys {SIGNAL_NAMES}")
        if set(self.l2_bias) != set(L2_SIGNALS):
            raise ValueError(f"l2_bias needs exactly the keys {L2_SIGNALS}")
        if not 0.0 <= self.deep_fraction <= 1.0:
            raise ValueError("deep_fraction must lie in [0, 1]")
        if not 0.0 < self.l2_pool_quantile <= 1.0:
            raise ValueError("l2_pool_quantile must lie in (0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown world config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class UserProfile:
    id: int
    latent: np.ndarray
    signup_recency: float
    language: int
    fatigue: float


@dataclass(frozen=True)
class ItemProfile:
    id: int
    latent: np.ndarray
    genre: int
    popularity: float


class LogisticTruth:
    """Signal probabilities as logistic functions of user/item attributes."""

    def __init__(self, genre_affinity: np.ndarray, config: WorldConfig):
        self.genre_affinity = np.asarray(genre_affinity, dtype=np.float64)
        self.config = config
        self._l1_bias = np.array([config.l1_bias[s] for s in SIGNAL_NAMES])
        self._l2_bias = np.array([config.l2_bias[s] for s in L2_SIGNALS])

    def probs(self, world: "World", users, items, level: int) -> np.ndarray:
        cfg = self.config
        users = np.asarray(users)
        items = np.asarray(items)
        dot = np.einsum("...d,...d->...", world.user_latent[users], world.item_latent[items])
        z = (
            cfg.dot_coef * dot
            + self.genre_affinity[world.user_language[users], world.item_genre[items]]
            + cfg.popularity_coef * np.log(world.item_popularity[items])
            - cfg.fatigue_coef * world.user_fatigue[users]
        )
        out = np.zeros(z.shape + (N_SIGNALS,))
        if level == 1:
            deep = world.item_deep[items]
            shift = np.where(deep, -cfg.deep_l1_penalty, 0.0)[..., None] * np.ones(N_SIGNALS)
            shift[..., CLICK] = np.where(deep, cfg.deep_click_bonus, 0.0)
            out[:] = _sigmoid(z[..., None] + self._l1_bias + shift)
        else:
            out[..., :3] = _sigmoid(z[..., None] + self._l2_bias)
        return out


class TableTruth:
    """Explicit probability tables, for small hand-built worlds.

    `l1` has shape (n_users, n_items, 4) and `l2` (n_users, n_items, 4);
    the click column of `l2` is ignored.
    """

    def __init__(self, l1: np.ndarray, l2: np.ndarray):
        self.l1 = np.asarray(l1, dtype=np.float64)
        self.l2 = np.array(l2, dtype=np.float64)
        self.l2[..., CLICK] = 0.0
        for t in (self.l1, self.l2):
            if np.any((t < 0) | (t > 1)):
                raise ValueError("probabilities must lie in [0, 1]")

    def probs(self, world, users, items, level: int) -> np.ndarray:
        table = self.l1 if level == 1 else self.l2
        return table[np.asarray(users), np.asarray(items)]


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class World:
    """Users, items, fixed second-level attachments and the ground truth."""

    config: WorldConfig
    seed: int
    user_latent: np.ndarray
    user_signup_recency: np.ndarray
    user_language: np.ndarray
    user_fatigue: np.ndarray
    item_latent: np.ndarray
    item_genre: np.ndarray
    item_popularity: np.ndarray
    item_deep: np.ndarray
    l2_attachment: np.ndarray
    truth: object

    def __post_init__(self):
        n, m = self.n_items, self.config.l2_size
        if self.l2_attachment.shape != (n, m):
            raise ValueError(f"l2_attachment must have shape {(n, m)}, got {self.l2_attachment.shape}")
        if m and (self.l2_attachment.min() < 0 or self.l2_attachment.max() >= n):
            raise ValueError("l2_attachment references unknown items")
        if self.user_latent.shape[1] != self.item_latent.shape[1]:
            raise ValueError("user and item latent dimensions differ")
        for a in (self.user_latent, self.item_latent, self.l2_attachment):
            a.setflags(write=False)

    @property
    def n_users(self) -> int:
        return self.user_latent.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_latent.shape[0]

    @property
    def slate_size(self) -> int:
        return self.config.slate_size

    @property
    def l2_size(self) -> int:
        return self.config.l2_size

    def user(self, user_id: int) -> UserProfile:
        self._check_user(user_id)
        return UserProfile(user_id, self.user_latent[user_id], float(self.user_signup_recency[user_id]),
                           int(self.user_language[user_id]), float(self.user_fatigue[user_id]))

    def item(self, item_id: int) -> ItemProfile:
        self._check_items([item_id])
        return ItemProfile(item_id, self.item_latent[item_id], int(self.item_genre[item_id]),
                           float(self.item_popularity[item_id]))

    def signal_probs(self, users, items, level: int = 1) -> np.ndarray:
        """Per-signal probabilities (likes, shares, favs, clicks) given examination."""
        return self.truth.probs(self, users, items, level)

    def _check_user(self, user_id):
        if not 0 <= int(user_id) < self.n_users:
            raise KeyError(f"unknown user {user_id}")

    def _check_items(self, items):
        items = np.asarray(items)
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise KeyError("ranking contains unknown items")

    # serialization ---------------------------------------------------------

    def to_json(self, provenance: Optional[dict] = None) -> str:
        if not isinstance(self.truth, LogisticTruth):
            raise TypeError("only worlds with logistic ground truth can be serialized")
        payload = {
            "format": "nestedltr-world",
            "version": 1,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "genre_affinity": self.truth.genre_affinity.tolist(),
            "user_latent": self.user_latent.tolist(),
            "user_signup_recency": self.user_signup_recency.tolist(),
            "user_language": self.user_language.tolist(),
            "user_fatigue": self.user_fatigue.tolist(),
            "item_latent": self.item_latent.tolist(),
            "item_genre": self.item_genre.tolist(),
            "item_popularity": self.item_popularity.tolist(),
            "item_deep": self.item_deep.astype(int).tolist(),
            "l2_attachment": self.l2_attachment.tolist(),
        }
        if provenance:
            payload["provenance"] = provenance
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "World":
        d = json.loads(text)
        if d.get("format") != "nestedltr-world":
            raise ValueError("not a world snapshot")
        config = WorldConfig.from_dict(d["config"])
        m = config.l2_size
        return cls(
            config=config,
            seed=d["seed"],
            user_latent=np.array(d["user_latent"], dtype=np.float64).reshape(config.n_users, -1),
            user_signup_recency=np.array(d["user_signup_recency"], dtype=np.float64),
            user_language=np.array(d["user_language"], dtype=np.int64),
            user_fatigue=np.array(d["user_fatigue"], dtype=np.float64),
            item_latent=np.array(d["item_latent"], dtype=np.float64).reshape(config.n_items, -1),
            item_genre=np.array(d["item_genre"], dtype=np.int64),
            item_popularity=np.array(d["item_popularity"], dtype=np.float64),
            item_deep=np.array(d["item_deep"], dtype=bool),
            l2_attachment=np.array(d["l2_attachment"], dtype=np.int64).reshape(config.n_items, m),
            truth=LogisticTruth(np.array(d["genre_affinity"]), config),
        )


def build_world(config: Optional[WorldConfig] = None, seed: int = 42) -> World:
    """Draw a world deterministically from `config` and `seed`.

    A `deep_fraction` share of items have depressed first-level engagement
    but second-level lists made of popular items close to them in latent
    space; the remaining items get uniformly random lists.
    """
    config = config or WorldConfig()
    config.validate()
    rng = np.random.default_rng([seed, 0x5EED])
    d = config.latent_dim
    U, I, m = config.n_users, config.n_items, config.l2_size

    user_latent = rng.normal(0.0, 1.0 / math.sqrt(d), size=(U, d))
    user_signup = rng.uniform(0.0, 1.0, size=U)
    user_language = rng.integers(0, config.n_languages, size=U)
    user_fatigue = rng.beta(2.0, 5.0, size=U)

    item_latent = rng.normal(0.0, 1.0 / math.sqrt(d), size=(I, d))
    item_genre = rng.integers(0, config.n_genres, size=I)
    item_popularity = rng.lognormal(0.0, config.popularity_sigma, size=I)
    item_deep = rng.uniform(size=I) < config.deep_fraction
    genre_affinity = rng.normal(0.0, config.genre_scale, size=(config.n_languages, config.n_genres))

    attachment = np.zeros((I, m), dtype=np.int64)
    if m:
        n_pool = max(m + 1, int(round(config.l2_pool_quantile * I)))
        pool = np.argsort(-item_popularity, kind="stable")[:n_pool]
        unit = item_latent / np.linalg.norm(item_latent, axis=1, keepdims=True)
        for a in range(I):
            if item_deep[a]:
                sim = unit[pool] @ unit[a]
                sim[pool == a] = -np.inf
                attachment[a] = pool[np.argsort(-sim, kind="stable")[:m]]
            else:
                picks = rng.choice(I - 1, size=m, replace=False)
                attachment[a] = np.where(picks >= a, picks + 1, picks)

    return World(
        config=config,
        seed=int(seed),
        user_latent=user_latent,
        user_signup_recency=user_signup,
        user_language=user_language,
        user_fatigue=user_fatigue,
        item_latent=item_latent,
        item_genre=item_genre,
        item_popularity=item_popularity,
        item_deep=item_deep,
        l2_attachment=attachment,
        truth=LogisticTruth(genre_affinity, config),
    )


def table_world(l1_probs, l2_probs, l2_attachment, slate_size: int, seed: int = 0,
                latent_dim: int = 2) -> World:
    """A small world whose signal probabilities are given explicitly.

    `l1_probs` and `l2_probs` have shape (n_users, n_items, 4) and
    `l2_attachment` shape (n_items, m).  Latents are zero and every other
    attribute is neutral, so features carry no information.
    """
    l1 = np.asarray(l1_probs, dtype=np.float64)
    U, I = l1.shape[:2]
    attachment = np.asarray(l2_attachment, dtype=np.int64).reshape(I, -1)
    m = attachment.shape[1]
    config = WorldConfig(n_users=U, n_items=I, slate_size=slate_size, l2_size=m, latent_dim=latent_dim,
                         n_genres=1, n_languages=1)
    return World(
        config=config,
        seed=int(seed),
        user_latent=np.zeros((U, latent_dim)),
        user_signup_recency=np.zeros(U),
        user_language=np.zeros(U, dtype=np.int64),
        user_fatigue=np.zeros(U),
        item_latent=np.zeros((I, latent_dim)),
        item_genre=np.zeros(I, dtype=np.int64),
        item_popularity=np.ones(I),
        item_deep=np.zeros(I, dtype=bool),
        l2_attachment=attachment,
        truth=TableTruth(l1, l2_probs),
    )


# --------------------------------------------------------------------------
# sessions


@dataclass
class NestedSessionLog:
    """One logged session: the first-level slate, the attached lists and all observations.

    Observation arrays are indexed by 0-based slot; their 1-based positions are
    slot + 1.  `l1_obs[i]` is the signal vector at first-level position i+1 and
    `l2_obs[i, j]` the one at second-level position j+1 of that item's list.
    """

    session_id: int
    user_id: int
    l1_slate: np.ndarray
    l2_slates: np.ndarray
    l1_obs: np.ndarray
    l2_obs: np.ndarray
    examined_l1: np.ndarray
    entered_l2: np.ndarray
    examined_l2: np.ndarray

    @property
    def n(self) -> int:
        return len(self.l1_slate)

    @property
    def m(self) -> int:
        return self.l2_slates.shape[1]

    def signals(self, i: int, j: int = 0) -> SignalVector:
        """y_ij with 1-based i; j = 0 is the first-level observation."""
        row = self.l1_obs[i - 1] if j == 0 else self.l2_obs[i - 1, j - 1]
        return SignalVector(*(int(v) for v in row))

    def violations(self) -> list:
        problems = []
        n, m = self.n, self.m
        if self.l2_slates.shape != (n, m) or self.l1_obs.shape != (n, N_SIGNALS):
            problems.append("array shapes inconsistent with slate")
            return problems
        if self.l2_obs.shape != (n, m, N_SIGNALS):
            problems.append("array shapes inconsistent with slate")
            return problems
        if len(set(self.l1_slate.tolist())) != n:
            problems.append("duplicate items in first-level slate")
        if np.any(self.l1_obs < 0) or np.any(self.l2_obs < 0):
            problems.append("negative observation")
        if np.any(self.l1_obs[~self.examined_l1] != 0):
            problems.append("signal on an unexamined first-level position")
        if np.any(self.l2_obs[~self.entered_l2] != 0) or np.any(self.examined_l2[~self.entered_l2]):
            problems.append("second-level activity without entering the feed")
        if np.any(self.l2_obs[~self.examined_l2] != 0):
            problems.append("signal on an unexamined second-level position")
        clicked = self.l1_obs[:, CLICK] > 0
        if np.any(clicked & ~self.examined_l1):
            problems.append("click on an unexamined position")
        if np.any(clicked != self.entered_l2):
            problems.append("entered_l2 disagrees with first-level clicks")
        return problems

    def validate(self):
        problems = self.violations()
        if problems:
            raise ValueError("invalid session log: " + "; ".join(problems))

    def to_record(self) -> dict:
        entered = np.flatnonzero(self.entered_l2)
        return {
            "session_id": int(self.session_id),
            "user_id": int(self.user_id),
            "l1_slate": self.l1_slate.tolist(),
            "l2_slates": self.l2_slates.tolist(),
            "l1_obs": self.l1_obs.tolist(),
            "examined_l1": (np.flatnonzero(self.examined_l1) + 1).tolist(),
            "entered_l2": (entered + 1).tolist(),
            "examined_l2": {str(i + 1): (np.flatnonzero(self.examined_l2[i]) + 1).tolist() for i in entered},
            "l2_obs": {str(i + 1): self.l2_obs[i].tolist() for i in entered},
        }

    @classmethod
    def from_record(cls, rec: dict) -> "NestedSessionLog":
        l1_slate = np.array(rec["l1_slate"], dtype=np.int64)
        n = len(l1_slate)
        l2_slates = np.array(rec["l2_slates"], dtype=np.int64).reshape(n, -1)
        m = l2_slates.shape[1]
        examined_l1 = np.zeros(n, dtype=bool)
        examined_l1[np.array(rec["examined_l1"], dtype=np.int64) - 1] = True
        entered = np.zeros(n, dtype=bool)
        entered[np.array(rec["entered_l2"], dtype=np.int64) - 1] = True
        examined_l2 = np.zeros((n, m), dtype=bool)
        l2_obs = np.zeros((n, m, N_SIGNALS), dtype=np.int64)
        for key, positions in rec["examined_l2"].items():
            examined_l2[int(key) - 1, np.array(positions, dtype=np.int64) - 1] = True
        for key, obs in rec["l2_obs"].items():
            l2_obs[int(key) - 1] = np.array(obs, dtype=np.int64).reshape(m, N_SIGNALS)
        return cls(
            session_id=rec["session_id"],
            user_id=rec["user_id"],
            l1_slate=l1_slate,
            l2_slates=l2_slates,
            l1_obs=np.array(rec["l1_obs"], dtype=np.int64).reshape(n, N_SIGNALS),
            l2_obs=l2_obs,
            examined_l1=examined_l1,
            entered_l2=entered,
            examined_l2=examined_l2,
        )


def write_logs(logs: Iterable[NestedSessionLog], path, provenance: Optional[dict] = None) -> int:
    """Write one JSON object per line; returns the number of sessions.

    With `provenance`, the first line is ``{"provenance": {...}}``.
    """
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        if provenance:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True, separators=(",", ":")) + "\n")
        for log in logs:
            fh.write(json.dumps(log.to_record(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def read_log_provenance(path) -> Optional[dict]:
    with open(path, encoding="utf-8") as fh:
        line = fh.readline()
    if not line.strip():
        return None
    rec = json.loads(line)
    return rec["provenance"] if set(rec) == {"provenance"} else None


def read_logs(path) -> Iterator[NestedSessionLog]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if lineno == 1 and set(rec) == {"provenance"}:
                    continue
                yield NestedSessionLog.from_record(rec)
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed session record ({exc})") from exc


@dataclass
class SessionBatch:
    """Vectorised observations for S sessions (see NestedSessionLog for layout)."""

    session_ids: np.ndarray
    users: np.ndarray
    rankings: np.ndarray
    l2_slates: np.ndarray
    l1_obs: np.ndarray
    l2_obs: np.ndarray
    examined_l1: np.ndarray
    entered_l2: np.ndarray
    examined_l2: np.ndarray

    def __len__(self):
        return len(self.users)

    def log(self, s: int) -> NestedSessionLog:
        return NestedSessionLog(
            session_id=int(self.session_ids[s]),
            user_id=int(self.users[s]),
            l1_slate=self.rankings[s].copy(),
            l2_slates=self.l2_slates[s].copy(),
            l1_obs=self.l1_obs[s].copy(),
            l2_obs=self.l2_obs[s].copy(),
            examined_l1=self.examined_l1[s].copy(),
            entered_l2=self.entered_l2[s].copy(),
            examined_l2=self.examined_l2[s].copy(),
        )

    def logs(self) -> Iterator[NestedSessionLog]:
        for s in range(len(self)):
            yield self.log(s)

    def rewards(self, weights_l1: ScalarizationWeights, weights_l2: ScalarizationWeights):
        """Per-session (first-level reward, second-level reward, click count)."""
        l1 = self.l1_obs @ weights_l1.as_array()
        l2 = self.l2_obs @ weights_l2.as_array()
        return l1.sum(axis=1), l2.sum(axis=(1, 2)), self.l1_obs[..., CLICK].sum(axis=1)


def simulate_sessions(world: World, users, rankings, keys, session_ids=None) -> SessionBatch:
    """Simulate S sessions at once.

    `keys` are per-session uint64 keys; a session's outcome depends only on
    its key, user and ranking, so results match `simulate_session` exactly.
    """
    users = np.asarray(users, dtype=np.int64)
    rankings = np.asarray(rankings, dtype=np.int64)
    keys = np.asarray(keys, dtype=np.uint64)
    if rankings.ndim != 2 or rankings.shape[0] != users.shape[0] or keys.shape != users.shape:
        raise ValueError("users, rankings and keys must describe the same sessions")
    S, n = rankings.shape
    m = world.l2_size
    if S and (users.min() < 0 or users.max() >= world.n_users):
        raise KeyError("unknown user")
    world._check_items(rankings)
    if n > 1:
        srt = np.sort(rankings, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            raise ValueError("ranking contains duplicate items")

    pos1 = np.arange(1, n + 1, dtype=np.uint64)
    k = keys[:, None]
    exam1 = uniform(k, 1, pos1, 0, _EXAMINE) < discounts(n)
    p1 = world.signal_probs(users[:, None], rankings, level=1)
    sig_codes = np.arange(1, N_SIGNALS + 1, dtype=np.uint64)
    u1 = uniform(k[..., None], 1, pos1[:, None], 0, sig_codes)
    l1_obs = ((u1 < p1) & exam1[..., None]).astype(np.int64)
    entered = l1_obs[..., CLICK] > 0

    l2_slates = world.l2_attachment[rankings]
    l2_obs = np.zeros((S, n, m, N_SIGNALS), dtype=np.int64)
    exam2 = np.zeros((S, n, m), dtype=bool)
    if m:
        s_idx, i_idx = np.nonzero(entered)
        if s_idx.size:
            pos2 = np.arange(1, m + 1, dtype=np.uint64)
            ke = keys[s_idx][:, None]
            pi = (i_idx + 1).astype(np.uint64)[:, None]
            ex = uniform(ke, 2, pi, pos2, _EXAMINE) < discounts(m)
            items2 = l2_slates[s_idx, i_idx]
            p2 = world.signal_probs(users[s_idx][:, None], items2, level=2)
            u2 = uniform(ke[..., None], 2, pi[..., None], pos2[:, None], sig_codes)
            obs = ((u2 < p2) & ex[..., None]).astype(np.int64)
            obs[..., CLICK] = 0
            l2_obs[s_idx, i_idx] = obs
            exam2[s_idx, i_idx] = ex

    if session_ids is None:
        session_ids = np.arange(S, dtype=np.int64)
    return SessionBatch(np.asarray(session_ids, dtype=np.int64), users, rankings, l2_slates,
                        l1_obs, l2_obs, exam1, entered, exam2)


def simulate_session(world: World, user: int, l1_ranking, seed: int, session_id: int = 0) -> NestedSessionLog:
    """Simulate one session of `user` facing `l1_ranking` (item ids in rank order)."""
    ranking = np.asarray(l1_ranking, dtype=np.int64)
    if ranking.ndim != 1 or ranking.size == 0:
        raise ValueError("ranking must be a non-empty list of item ids")
    key = hash_key(np.uint64(seed % 2**64))
    batch = simulate_sessions(world, [user], ranking[None, :], np.atleast_1d(key), [session_id])
    return batch.log(0)


def session_keys(world_seed: int, stream_seed: int, users, counters) -> np.ndarray:
    """Per-session keys from (world seed, stream seed, user id, session counter)."""
    return hash_key(np.uint64(world_seed % 2**64), np.uint64(stream_seed % 2**64), _SESSION_KEY,
                    np.asarray(users, dtype=np.int64), np.asarray(counters, dtype=np.int64))


# --------------------------------------------------------------------------
# policies and the online metric

Policy = Callable[[np.ndarray, np.ndarray], np.ndarray]
"""Maps (users (S,), candidates (S, C)) to rankings (S, n) of item ids."""


def sample_candidates(world: World, n_sessions: int, seed: int, candidate_size: Optional[int] = None):
    """Users and uniformly drawn candidate sets (without replacement) for `n_sessions` sessions."""
    C = candidate_size or world.slate_size
    if C > world.n_items:
        raise ValueError("candidate_size exceeds the item pool")
    rng = np.random.default_rng([world.seed % 2**63, seed % 2**63, _USER_DRAW])
    users = rng.integers(0, world.n_users, size=n_sessions)
    cands = rng.integers(0, world.n_items, size=(n_sessions, C))
    while True:
        srt = np.sort(cands, axis=1)
        bad = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1)) if C > 1 else np.array([], int)
        if bad.size == 0:
            break
        for s in bad:
            cands[s] = rng.choice(world.n_items, size=C, replace=False)
    return users, cands


def expected_item_values(world: World, users, items, weights_l1: ScalarizationWeights,
                         weights_l2: ScalarizationWeights) -> np.ndarray:
    """Closed-form expected reward of showing `items` to `users`, given examination.

    E[R_A] + P(click) * sum_j P(view j) * E[R_B(b_j)], the quantity a first-level
    ranker should sort by to maximise the online metric.
    """
    users = np.asarray(users)
    items = np.asarray(items)
    p1 = world.signal_probs(users, items, level=1)
    value = p1 @ weights_l1.as_array()
    m = world.l2_size
    if m:
        l2_items = world.l2_attachment[items]
        p2 = world.signal_probs(np.asarray(users)[..., None], l2_items, level=2)
        l2_value = (p2 @ weights_l2.as_array()) @ discounts(m)
        value = value + p1[..., CLICK] * l2_value
    return value


def exact_q(world: World, users, rankings, weights_l1, weights_l2) -> np.ndarray:
    """Per-session expected metric of the given rankings."""
    rankings = np.asarray(rankings)
    v = expected_item_values(world, np.asarray(users)[:, None], rankings, weights_l1, weights_l2)
    return v @ discounts(rankings.shape[1])


def random_policy(slate_size: int) -> Policy:
    """Show the first `slate_size` candidates; candidates are drawn i.i.d., so the order is uniform."""
    def policy(users, candidates):
        return np.asarray(candidates)[:, :slate_size]
    return policy


def score_policy(score_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], slate_size: int) -> Policy:
    """Rank candidates by descending score; ties go to the lower item id."""
    def policy(users, candidates):
        scores = score_fn(np.broadcast_to(users[:, None], candidates.shape), candidates)
        order = np.lexsort((candidates, -scores), axis=1)[:, :slate_size]
        return np.take_along_axis(candidates, order, axis=1)
    return policy


def oracle_policy(world: World, weights_l1, weights_l2) -> Policy:
    return score_policy(lambda u, c: expected_item_values(world, u, c, weights_l1, weights_l2),
                        world.slate_size)


@dataclass
class Rollout:
    """Per-session outcomes of running a policy online."""

    q: np.ndarray
    l1_reward: np.ndarray
    l2_reward: np.ndarray
    clicks: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.q.mean())

    @property
    def stderr(self) -> float:
        if len(self.q) < 2:
            return float("nan")
        return float(self.q.std(ddof=1) / math.sqrt(len(self.q)))


def rollout(world: World, policy: Policy, weights_l1: ScalarizationWeights, weights_l2: ScalarizationWeights,
            n_sessions: int, seed: int, candidate_size: Optional[int] = None, chunk: int = 20000) -> Rollout:
    if n_sessions < 1:
        raise ValueError("n_sessions must be >= 1")
    users, cands = sample_candidates(world, n_sessions, seed, candidate_size)
    parts = []
    for lo in range(0, n_sessions, chunk):
        hi = min(lo + chunk, n_sessions)
        u = users[lo:hi]
        ranking = np.asarray(policy(u, cands[lo:hi]), dtype=np.int64)
        if ranking.shape != (hi - lo, world.slate_size):
            raise ValueError(f"policy must return rankings of shape (S, {world.slate_size})")
        keys = session_keys(world.seed, seed, u, np.arange(lo, hi))
        batch = simulate_sessions(world, u, ranking, keys)
        parts.append(batch.rewards(weights_l1, weights_l2))
    l1, l2, clicks = (np.concatenate(x) for x in zip(*parts))
    return Rollout(l1 + l2, l1, l2, clicks)


def true_q(world: World, policy: Policy, weights_l1: ScalarizationWeights, weights_l2: ScalarizationWeights,
           n_sessions: int, seed: int, candidate_size: Optional[int] = None):
    """Monte-Carlo estimate of the online metric: (mean, standard error)."""
    r = rollout(world, policy, weights_l1, weights_l2, n_sessions, seed, candidate_size)
    return r.mean, r.stderr


def logging_batches(world: World, n_sessions: int, seed: int, chunk: int = 5000) -> Iterator[SessionBatch]:
    """Sessions under a uniformly random logging policy, in chunks."""
    policy = random_policy(world.slate_size)
    users, cands = sample_candidates(world, n_sessions, seed)
    for lo in range(0, n_sessions, chunk):
        hi = min(lo + chunk, n_sessions)
        rankings = policy(users[lo:hi], cands[lo:hi])
        keys = session_keys(world.seed, seed, users[lo:hi], np.arange(lo, hi))
        yield simulate_sessions(world, users[lo:hi], rankings, keys, session_ids=np.arange(lo, hi))


def simulate_logs(world: World, n_sessions: int, seed: int) -> Iterator[NestedSessionLog]:
    for batch in logging_batches(world, n_sessions, seed):
        yield from batch.logs()
