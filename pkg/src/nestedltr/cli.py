"""Command line entry point.

Every stage reads and writes documented files under the output directory::

    <out>/world.json                 world snapshot
    <out>/logs.jsonl                 logged sessions (first line: provenance)
    <out>/data/{train,validation,test}.csv
    <out>/models/<label>.json        model for each label
    <out>/models/<label>_trials.csv  hyperparameter search log
    <out>/reports/matrix.{csv,txt}   offline % DCG loss matrix
    <out>/reports/online.{csv,txt}   online comparison
    <out>/reports/checks.txt         ordering checks (reproduce only)

so each subcommand can be rerun on the outputs of the previous one.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .core import ALL_LABELS, SYNTHETIC_LABELS, LabelKind
from .evaluation import EvaluationMatrix, OnlineReport
from .labeling import SPLITS, RankingDataset
from .pipeline import (
    offline,
    online,
    ordering_checks,
    prepare,
    simulate,
    summarize_logs,
    train_label,
)
from .ranker.boosting import BoostedRanker
from .ranker.search import write_trial_log
from .simulator import World, read_logs, write_logs

logger = logging.getLogger("nestedltr")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


# --------------------------------------------------------------------------
# paths and file helpers


def _paths(out: str) -> dict:
    return {
        "world": os.path.join(out, "world.json"),
        "logs": os.path.join(out, "logs.jsonl"),
        "data": os.path.join(out, "data"),
        "models": os.path.join(out, "models"),
        "reports": os.path.join(out, "reports"),
    }


def _ensure_dir(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _with_header(cfg: RunConfig, text: str) -> str:
    return f"# {cfg.provenance_line()}\n{text}"


def _strip_header(text: str) -> str:
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def _load_world(out: str) -> World:
    with open(_paths(out)["world"], encoding="utf-8") as fh:
        return World.from_json(fh.read())


def _load_splits(out: str):
    d = _paths(out)["data"]
    return tuple(RankingDataset.read_csv(os.path.join(d, f"{s}.csv")) for s in SPLITS)


def _load_models(out: str, labels) -> dict:
    d = _paths(out)["models"]
    models = {}
    for k in labels:
        path = os.path.join(d, f"{k.value}.json")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing model {path}; run `train --label {k.value}` first")
        models[k] = BoostedRanker.load(path)
    return models


# --------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: str) -> dict:
    p = _paths(out)
    _ensure_dir(out)
    world, logs = simulate(cfg)
    _write_text(p["world"], world.to_json(cfg.provenance()))
    write_logs(logs, p["logs"], cfg.provenance())
    summary = summarize_logs(logs)
    print(summary.render(), end="")
    return {"world": world, "logs": logs, "summary": summary}


def cmd_prepare(cfg: RunConfig, out: str, logs_path: Optional[str] = None, world=None, logs=None,
                debias_l1: Optional[bool] = None):
    p = _paths(out)
    world = world if world is not None else _load_world(out)
    if logs is None:
        logs = list(read_logs(logs_path or p["logs"]))
    splits = prepare(cfg, world, logs, debias_l1)
    _ensure_dir(p["data"])
    debias = cfg.debias_l1 if debias_l1 is None else debias_l1
    for ds in splits:
        ds.write_csv(os.path.join(p["data"], f"{ds.split}.csv"),
                     comment=f"{cfg.provenance_line()} debias_l1={str(debias).lower()}")
        print(f"{ds.split}: {len(ds)} examples, {len(ds.groups)} groups, positive rate {ds.positive_rate:.6f}")
    return splits


def cmd_train(cfg: RunConfig, out: str, labels, splits=None) -> dict:
    p = _paths(out)
    train, validation, _ = splits if splits is not None else _load_splits(out)
    _ensure_dir(p["models"])
    models = {}
    for k in labels:
        model, trials = train_label(cfg, train, validation, k, cfg.provenance())
        model.save(os.path.join(p["models"], f"{k.value}.json"))
        write_trial_log(trials, os.path.join(p["models"], f"{k.value}_trials.csv"), cfg.provenance_line())
        meta = model.training_meta
        print(f"{k.value}: {model.n_trees} trees, validation DCG@{cfg.train.early_stopping_k} "
              f"{meta['best_validation_dcg']:.6f} ({len(trials)} trial(s))")
        models[k] = model
    return models


def cmd_evaluate_offline(cfg: RunConfig, out: str, models=None, test=None) -> EvaluationMatrix:
    p = _paths(out)
    models = models if models is not None else _load_models(out, ALL_LABELS)
    test = test if test is not None else _load_splits(out)[2]
    matrix = offline(cfg, models, test)
    _ensure_dir(p["reports"])
    _write_text(os.path.join(p["reports"], "matrix.csv"), _with_header(cfg, matrix.to_csv()))
    text = _with_header(cfg, matrix.render())
    _write_text(os.path.join(p["reports"], "matrix.txt"), text)
    print(matrix.render(), end="")
    return matrix


def cmd_evaluate_online(cfg: RunConfig, out: str, models=None, world=None) -> OnlineReport:
    p = _paths(out)
    world = world if world is not None else _load_world(out)
    models = models if models is not None else _load_models(out, SYNTHETIC_LABELS)
    report = online(cfg, world, models)
    _ensure_dir(p["reports"])
    _write_text(os.path.join(p["reports"], "online.csv"), _with_header(cfg, report.to_csv()))
    _write_text(os.path.join(p["reports"], "online.txt"), _with_header(cfg, report.render()))
    print(report.render(), end="")
    return report


def cmd_reproduce(cfg: RunConfig, out: str) -> int:
    """Full chain; returns the process exit code (1 when an ordering check fails)."""
    def stage(name, fn, *args, **kwargs):
        logger.info("stage %s", name)
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001 - tag and re-raise with the stage name
            raise StageError(name, exc) from exc

    sim = stage("simulate", cmd_simulate, cfg, out)
    splits = stage("prepare", cmd_prepare, cfg, out, world=sim["world"], logs=sim["logs"])
    models = stage("train", cmd_train, cfg, out, ALL_LABELS, splits=splits)
    matrix = stage("evaluate-offline", cmd_evaluate_offline, cfg, out, models=models, test=splits[2])
    report = stage("evaluate-online", cmd_evaluate_online, cfg, out, models=models, world=sim["world"])
    lines, ok = ordering_checks(sim["world"], matrix, report)
    _write_text(os.path.join(_paths(out)["reports"], "checks.txt"), _with_header(cfg, "\n".join(lines) + "\n"))
    print("\n".join(lines))
    print("ordering checks: " + ("passed" if ok else "FAILED"))
    return 0 if ok else 1


# --------------------------------------------------------------------------
# argument parsing


def _label_list(value: str) -> List[LabelKind]:
    if value == "all":
        return list(ALL_LABELS)
    return [LabelKind.parse(v.strip()) for v in value.split(",")]


def _common_flags(default) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=default)
    common.add_argument("--config", metavar="PATH", help="run config (YAML); built-in defaults if omitted")
    common.add_argument("--seed", type=int, metavar="INT", help="override the master seed")
    common.add_argument("--out", metavar="DIR", help="override the output directory")
    common.add_argument("--threads", type=int, metavar="INT", help="worker threads for compiled kernels")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return common


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; the subcommand
    # copies suppress their defaults so they never mask a value given earlier
    common = _common_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="nestedltr", description="Nested-feed learning-to-rank experiments",
                                     parents=[_common_flags(None)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="build the world and log sessions")
    prep = sub.add_parser("prepare", parents=[common], help="label, sample and split the logs")
    prep.add_argument("--logs", metavar="PATH", help="session log file (default <out>/logs.jsonl)")
    prep.add_argument("--debias-l1", dest="debias_l1", action="store_true", default=None,
                      help="divide first-level rewards by their examination probability")
    prep.add_argument("--no-debias-l1", dest="debias_l1", action="store_false")
    tr = sub.add_parser("train", parents=[common], help="search and fit models")
    tr.add_argument("--label", default="all", help="label kind, comma-separated list, or 'all' (default)")
    sub.add_parser("evaluate-offline", parents=[common], help="offline %% DCG loss matrix")
    sub.add_parser("evaluate-online", parents=[common], help="simulated online comparison of s1/s2/s3")
    sub.add_parser("reproduce", parents=[common], help="run every stage and check the orderings")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _set_threads(n: Optional[int]):
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be >= 1")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        _set_threads(args.threads)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = cfg.output_dir
    try:
        if args.command == "simulate":
            cmd_simulate(cfg, out)
        elif args.command == "prepare":
            cmd_prepare(cfg, out, args.logs, debias_l1=args.debias_l1)
        elif args.command == "train":
            cmd_train(cfg, out, _label_list(args.label))
        elif args.command == "evaluate-offline":
            cmd_evaluate_offline(cfg, out)
        elif args.command == "evaluate-online":
            cmd_evaluate_online(cfg, out)
        elif args.command == "reproduce":
            return cmd_reproduce(cfg, out)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
