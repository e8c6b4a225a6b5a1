"""Command-line interface.

Every subcommand accepts ``--config`` (a YAML path or the name of a bundled
config), ``--seed`` and ``--out``.  Failures print one JSON object on stderr
and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bocd import ChangepointDetector
from .dynamics.buffer import ReplayBuffer
from .dynamics.ensemble import EnsembleModel
from .errors import InputError, NotFoundError, SitAwareError
from .harness.config import (ExperimentConfig, config_to_dict, default_config, default_config_names,
                             load_config)
from .harness.io import CsvTrace, read_csv, read_stream_csv, write_json
from .harness.pipelines import annotate, collect, evaluate_paths, run_active, train_passive
from .mppi import mppi_plan
from .situations import export_means, load_library
from .stats import NormalWishartParams


def resolve_config(spec: str | None) -> ExperimentConfig:
    if spec is None:
        return ExperimentConfig()
    if Path(spec).is_file():
        return load_config(spec)
    if spec in default_config_names():
        return default_config(spec)
    raise NotFoundError(f"config {spec!r} is neither a file nor a bundled config "
                        f"({', '.join(default_config_names())})")


def _config(args, mode: str | None = None) -> ExperimentConfig:
    cfg = resolve_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if mode is not None:
        changes["mode"] = mode
    return cfg.replace(**changes) if changes else cfg


def _summary(report) -> dict:
    return {"mean_reward": report.mean_reward, "one_step_mse": report.one_step_mse,
            "control_inconsistency": report.control_inconsistency,
            "detection_rate": report.detection.get("detection_rate"),
            "false_alarms_per_500": report.detection.get("false_alarms_per_500")}


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=lambda v: None))


def cmd_check_config(args) -> None:
    cfg = _config(args)
    _print(config_to_dict(cfg))


def cmd_collect(args) -> None:
    cfg = _config(args)
    buf = collect(cfg, cfg.out_dir)
    _print({"transitions": len(buf), "dataset": str(Path(cfg.out_dir) / "dataset.jsonl")})


def _dataset(path) -> ReplayBuffer:
    buf = ReplayBuffer.read_jsonl(path)
    if len(buf) == 0:
        raise InputError(f"dataset {path} holds no records")
    return buf


def cmd_annotate(args) -> None:
    cfg = _config(args, "passive")
    buf, lib = annotate(_dataset(args.dataset), cfg, cfg.out_dir)
    _print({"transitions": len(buf), "situations": len(lib)})


def cmd_train_passive(args) -> None:
    cfg = _config(args, "passive")
    model, baseline, buf, lib = train_passive(_dataset(args.dataset), cfg, cfg.out_dir)
    _print({"transitions": len(buf), "situations": len(lib), "epochs": model.history.epochs,
            "baseline": baseline is not None})


def cmd_train_active(args) -> None:
    cfg = _config(args, "active")
    _print(_summary(run_active(cfg, cfg.out_dir)))


def cmd_evaluate(args) -> None:
    cfg = _config(args, "evaluate")
    run = Path(args.run) if args.run else None
    model = args.model or (run / "model.npz" if run else None)
    library = args.library or (run / "library.json" if run else None)
    if model is None or library is None:
        raise InputError("evaluate needs --run or both --model and --library")
    baseline = args.baseline
    if baseline is None and run is not None and cfg.baseline and (run / "baseline.npz").is_file():
        baseline = run / "baseline.npz"
    reports = evaluate_paths(model, library, cfg, cfg.out_dir, baseline)
    _print({k: _summary(r) for k, r in reports.items()})


def cmd_detect(args) -> None:
    cfg = _config(args)
    stream = read_stream_csv(args.stream)
    n0 = min(cfg.sa.min_support, stream.shape[0])
    if n0 < 2:
        raise InputError("the stream needs at least two rows to form a prior")
    prior = NormalWishartParams.empirical(stream[:n0], inflation=cfg.sa.prior_inflation,
                                          covariance=cfg.sa.prior_covariance)
    det = ChangepointDetector(prior, cfg.sa.hazard_lambda, cfg.sa.truncation_log_threshold,
                              cfg.sa.predictive_mode)
    out = Path(cfg.out_dir)
    trace = CsvTrace(out / "detect.csv", ["step", "changepoint", "log_growth", "log_change", "map_run_length"])
    cps = []
    for t, x in enumerate(stream):
        d = det.update(x)
        trace.add(t, d.changepoint, d.log_growth, d.log_change, d.map_run_length)
        if d.changepoint:
            cps.append(t)
    trace.flush()
    _print({"steps": int(stream.shape[0]), "changepoints": cps})


def cmd_plot_data(args) -> None:
    """Figure-ready CSVs from a run directory."""
    cfg = _config(args)
    run = Path(args.run)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if (run / "detector.csv").is_file():
        det = read_csv(run / "detector.csv")
        tr = CsvTrace(out / "run_length.csv", ["episode", "step", "map_run_length", "changepoint", "situation_id"])
        for row in zip(det["episode"], det["step"], det["map_run_length"], det["changepoint"], det["situation_id"]):
            tr.add(*(int(v) for v in row))
        tr.flush()
        written.append("run_length.csv")
    if (run / "rewards.csv").is_file():
        rew = read_csv(run / "rewards.csv")
        tr = CsvTrace(out / "reward_curve.csv", ["episode", "reward", "waypoints"])
        for e, r, w in zip(rew["episode"], rew["reward"], rew["waypoints"]):
            tr.add(int(e), float(r), int(w))
        tr.flush()
        written.append("reward_curve.csv")
    if (run / "library.json").is_file():
        lib = load_library(run / "library.json")
        export_means(lib, out / "situation_means.csv")
        written.append("situation_means.csv")
        if (run / "model.npz").is_file() and len(lib):
            model = EnsembleModel.load(run / "model.npz")
            preset = cfg.preset
            start = preset.start_state()
            goal = preset.task.waypoints[0]
            cols = ["situation_id", "symbol", "h"] + [f"a{i}" for i in range(cfg.mppi.action_dim)]
            tr = CsvTrace(out / "action_plans.csv", cols)
            for s in lib.situations:
                res = mppi_plan(model, start, s.symbol, goal, cfg.obstacles, cfg.mppi, seed=[cfg.seed, 17, s.id])
                for h, a in enumerate(res.action_sequence):
                    tr.add(s.id, s.symbol, h, *a)
            tr.flush()
            written.append("action_plans.csv")
    _print({"written": written})


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config path or bundled config name")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="sitaware", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check-config", parents=[common], help="validate a config and print it normalized")
    s.set_defaults(func=cmd_check_config)
    s = sub.add_parser("collect", parents=[common], help="record exploration episodes without symbols")
    s.set_defaults(func=cmd_collect)
    s = sub.add_parser("annotate", parents=[common], help="label a dataset with situation symbols")
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_annotate)
    s = sub.add_parser("train-passive", parents=[common], help="annotate a dataset and train the models")
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_train_passive)
    s = sub.add_parser("train-active", parents=[common], help="active model-based training loop")
    s.set_defaults(func=cmd_train_active)
    s = sub.add_parser("evaluate", parents=[common], help="evaluate frozen artifacts on the task suite")
    s.add_argument("--run", help="directory holding model.npz, library.json and optionally baseline.npz")
    s.add_argument("--model")
    s.add_argument("--library")
    s.add_argument("--baseline")
    s.set_defaults(func=cmd_evaluate)
    s = sub.add_parser("detect", parents=[common], help="run the changepoint detector over a CSV stream")
    s.add_argument("--stream", required=True)
    s.set_defaults(func=cmd_detect)
    s = sub.add_parser("plot-data", parents=[common], help="emit figure-ready CSVs from a run directory")
    s.add_argument("--run", required=True)
    s.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SitAwareError as exc:
        err = {"error": exc.kind, "message": str(exc)}
        loc = getattr(exc, "location", None)
        if loc:
            err["location"] = loc
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
