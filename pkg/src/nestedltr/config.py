"""Run configuration: YAML schema, validation and stage-seed derivation.

A run config is a YAML mapping with these sections (all optional)::

    master_seed: 42            # world seed; every other stage seed derives from it
    output_dir: runs/desk
    world: {...}               # WorldConfig fields, or a path to a YAML file holding them
    weights:
      l1: {likes: 1.0, shares: 2.0, favs: 1.5, clicks: 0.5}
      l2: {likes: 1.0, shares: 2.0, favs: 1.5, clicks: 0.0}
    simulation:
      n_sessions: 20000
    labeling:
      positive_rate_target: 0.05
      split_ratios: [0.70, 0.15, 0.15]
      debias_l1: false
    training:
      n_trials: 1
      base: {...}              # TrainConfig fields
      space: {...}             # searchable fields: value, [low, high] or {choices: [...]}
    evaluation:
      ks: [3, 5, 10]
      n_sessions: 20000
      n_seeds: 5               # or seeds: [explicit, list]
      candidate_size: 40
      alpha: 0.05

Unknown keys anywhere are errors reported with their line number.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import yaml

from . import __version__
from .core import ScalarizationWeights
from .ranker.boosting import TrainConfig
from .ranker.search import SEARCHABLE, _check_space
from .simulator import L2_SIGNALS, WorldConfig

TOOL_NAME = "nestedltr"

_WEIGHT_KEYS = {"likes": None, "shares": None, "favs": None, "clicks": None}
_WORLD_KEYS = {f.name: None for f in dataclasses.fields(WorldConfig)}
_WORLD_KEYS["l1_bias"] = dict(_WEIGHT_KEYS)
_WORLD_KEYS["l2_bias"] = {k: None for k in L2_SIGNALS}

SCHEMA = {
    "master_seed": None,
    "output_dir": None,
    "world": _WORLD_KEYS,
    "weights": {"l1": _WEIGHT_KEYS, "l2": _WEIGHT_KEYS},
    "simulation": {"n_sessions": None},
    "labeling": {"positive_rate_target": None, "split_ratios": None, "debias_l1": None},
    "training": {
        "n_trials": None,
        "base": {f.name: None for f in dataclasses.fields(TrainConfig) if f.name != "seed"},
        "space": {name: None for name in SEARCHABLE},
    },
    "evaluation": {"ks": None, "n_sessions": None, "n_seeds": None, "seeds": None,
                   "candidate_size": None, "alpha": None},
}

DEFAULT_WEIGHTS_L1 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.5)
DEFAULT_WEIGHTS_L2 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.0)


class ConfigError(ValueError):
    pass


def stage_seed(master_seed: int, stage: str) -> int:
    """63-bit seed for a pipeline stage: the first 8 bytes of sha256("<master>:<stage>")."""
    digest = hashlib.sha256(f"{int(master_seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class RunConfig:
    master_seed: int = 42
    output_dir: str = "runs/desk"
    world: WorldConfig = field(default_factory=WorldConfig)
    weights_l1: ScalarizationWeights = DEFAULT_WEIGHTS_L1
    weights_l2: ScalarizationWeights = DEFAULT_WEIGHTS_L2
    n_sessions: int = 20000
    positive_rate_target: float = 0.05
    split_ratios: Tuple[float, float, float] = (0.70, 0.15, 0.15)
    debias_l1: bool = False
    n_trials: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    space: dict = field(default_factory=dict)
    ks: Tuple[int, ...] = (3, 5, 10)
    online_sessions: int = 20000
    n_online_seeds: int = 5
    online_seeds: Optional[Tuple[int, ...]] = None
    candidate_size: int = 40
    alpha: float = 0.05

    def __post_init__(self):
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        self.ks = tuple(int(k) for k in self.ks)
        if self.online_seeds is not None:
            self.online_seeds = tuple(int(s) for s in self.online_seeds)
        self.validate()

    def validate(self):
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ValueError("master_seed must be a non-negative integer")
        if self.n_sessions < 0:
            raise ValueError("simulation.n_sessions must be >= 0")
        if not 0.0 < self.positive_rate_target < 1.0:
            raise ValueError("labeling.positive_rate_target must lie in (0, 1)")
        if len(self.split_ratios) != 3 or any(r <= 0 for r in self.split_ratios) \
                or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("labeling.split_ratios must be three positive numbers summing to 1")
        if self.n_trials < 1:
            raise ValueError("training.n_trials must be >= 1")
        _check_space(self.space)
        if not self.ks or any(k < 1 for k in self.ks):
            raise ValueError("evaluation.ks must be a non-empty list of integers >= 1")
        if self.online_sessions < 1:
            raise ValueError("evaluation.n_sessions must be >= 1")
        if len(self.seeds_online()) < 2:
            raise ValueError("evaluation needs at least two online seeds")
        if self.candidate_size < self.world.slate_size or self.candidate_size > self.world.n_items:
            raise ValueError("evaluation.candidate_size must lie in [world.slate_size, world.n_items]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("evaluation.alpha must lie in (0, 1)")

    # seeds ------------------------------------------------------------------

    @property
    def world_seed(self) -> int:
        return self.master_seed

    def seed(self, stage: str) -> int:
        return stage_seed(self.master_seed, stage)

    def seeds_online(self) -> Tuple[int, ...]:
        if self.online_seeds is not None:
            return self.online_seeds
        return tuple(self.seed(f"online:{i}") for i in range(self.n_online_seeds))

    def train_config(self) -> TrainConfig:
        return self.train.replace(seed=self.seed("train"))

    # identity ---------------------------------------------------------------

    def to_dict(self) -> dict:
        """Nested form, loadable again with `from_dict`."""
        evaluation = {"ks": list(self.ks), "n_sessions": self.online_sessions,
                      "candidate_size": self.candidate_size, "alpha": self.alpha}
        if self.online_seeds is not None:
            evaluation["seeds"] = list(self.online_seeds)
        else:
            evaluation["n_seeds"] = self.n_online_seeds
        base = self.train.to_dict()
        base.pop("seed")
        return {
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "world": self.world.to_dict(),
            "weights": {"l1": self.weights_l1.to_dict(), "l2": self.weights_l2.to_dict()},
            "simulation": {"n_sessions": self.n_sessions},
            "labeling": {"positive_rate_target": self.positive_rate_target,
                         "split_ratios": list(self.split_ratios), "debias_l1": self.debias_l1},
            "training": {"n_trials": self.n_trials, "base": base, "space": self.space},
            "evaluation": evaluation,
        }

    def config_hash(self) -> str:
        """Hash of everything that shapes results; the master seed and output dir are excluded."""
        d = self.to_dict()
        d.pop("master_seed")
        d.pop("output_dir")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"tool": TOOL_NAME, "version": __version__, "master_seed": self.master_seed,
                "config_hash": self.config_hash()}

    def provenance_line(self) -> str:
        p = self.provenance()
        return " ".join(f"{k}={p[k]}" for k in ("tool", "version", "master_seed", "config_hash"))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        _check_plain(d, SCHEMA, "")
        world = d.get("world", {})
        if isinstance(world, str):
            world_path = os.path.join(base_dir, world)
            world = load_yaml_checked(world_path, _WORLD_KEYS)
        weights = d.get("weights", {})
        sim = d.get("simulation", {})
        lab = d.get("labeling", {})
        tr = d.get("training", {})
        ev = d.get("evaluation", {})
        kw = {}
        if "master_seed" in d:
            kw["master_seed"] = d["master_seed"]
        if "output_dir" in d:
            kw["output_dir"] = str(d["output_dir"])
        if "seeds" in ev and "n_seeds" in ev:
            raise ValueError("evaluation: give either seeds or n_seeds, not both")
        return cls(
            world=WorldConfig.from_dict(world or {}),
            weights_l1=ScalarizationWeights.from_dict(weights["l1"]) if "l1" in weights else DEFAULT_WEIGHTS_L1,
            weights_l2=ScalarizationWeights.from_dict(weights["l2"]) if "l2" in weights else DEFAULT_WEIGHTS_L2,
            n_sessions=int(sim.get("n_sessions", 20000)),
            positive_rate_target=float(lab.get("positive_rate_target", 0.05)),
            split_ratios=tuple(lab.get("split_ratios", (0.70, 0.15, 0.15))),
            debias_l1=bool(lab.get("debias_l1", False)),
            n_trials=int(tr.get("n_trials", 1)),
            train=TrainConfig.from_dict(tr.get("base", {}) or {}),
            space=dict(tr.get("space", {}) or {}),
            ks=tuple(ev.get("ks", (3, 5, 10))),
            online_sessions=int(ev.get("n_sessions", 20000)),
            n_online_seeds=int(ev.get("n_seeds", 5)),
            online_seeds=tuple(ev["seeds"]) if "seeds" in ev else None,
            candidate_size=int(ev.get("candidate_size", 40)),
            alpha=float(ev.get("alpha", 0.05)),
            **kw,
        )


# --------------------------------------------------------------------------
# YAML loading with line-precise errors


def _check_plain(d, schema, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    for key, value in d.items():
        if key not in schema:
            raise ConfigError(f"unknown key {path}{key!r}; allowed: {sorted(schema)}")
        sub = schema[key]
        if isinstance(sub, dict) and isinstance(value, dict):
            _check_plain(value, sub, f"{path}{key}.")


def _check_node(node, schema, path, source):
    """Walk a composed YAML node, rejecting keys absent from `schema`."""
    if not isinstance(node, yaml.MappingNode):
        where = f"{source}:{node.start_mark.line + 1}"
        raise ConfigError(f"{where}: section {path.rstrip('.') or 'top level'!r} must be a mapping")
    seen = set()
    for key_node, value_node in node.value:
        key = key_node.value
        where = f"{source}:{key_node.start_mark.line + 1}:{key_node.start_mark.column + 1}"
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {path}{key}")
        seen.add(key)
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {path}{key!r} (allowed: {', '.join(sorted(schema))})")
        sub = schema[key]
        if isinstance(sub, dict) and isinstance(value_node, yaml.MappingNode):
            _check_node(value_node, sub, f"{path}{key}.", source)


def _section_lines(node, path="", out=None) -> Dict[str, int]:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            name = f"{path}{key_node.value}"
            out[name] = key_node.start_mark.line + 1
            _section_lines(value_node, name + ".", out)
    return out


def load_yaml_checked(path, schema) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if node is None:
        return {}
    _check_node(node, schema, "", path)
    return yaml.safe_load(text) or {}


def load_config(path) -> RunConfig:
    """Parse and validate a run config file.

    Errors name the file and line of the offending key or section.
    """
    data = load_yaml_checked(path, SCHEMA)
    with open(path, encoding="utf-8") as fh:
        lines = _section_lines(yaml.compose(fh.read(), Loader=yaml.SafeLoader))
    try:
        return RunConfig.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        msg = str(exc)
        # attach the line of the most specific section the message mentions
        hits = [name for name in lines if name.split(".")[-1] in msg or name in msg]
        hits.sort(key=lambda n: (-n.count("."), lines[n]))
        where = f"{path}:{lines[hits[0]]}" if hits else str(path)
        raise ConfigError(f"{where}: {msg}") from exc


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
