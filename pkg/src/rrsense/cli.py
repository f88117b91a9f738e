"""Command-line entry point: ``rrsense {synth,run,eval,train-regressor,bench}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import load_config
from .errors import ConfigError, RRSenseError
from .frames_io import load_frames, save_frames
from .harness import RunConfig
from .regressor import load_model, regressor_train, save_model
from .synthesis import SubjectScenario, synthesize_frames

log = logging.getLogger("rrsense")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    est = getattr(args, "estimator", None)
    if est:
        cfg = dataclasses.replace(cfg, estimator=est)
    return cfg


def _model(args, cfg):
    path = getattr(args, "model", None) or cfg.model_path
    if path:
        return load_model(path)
    if cfg.estimator == "regressor":
        raise ConfigError("the regressor estimator needs --model or run.model_path")
    return None


def cmd_synth(args):
    cfg = _config(args)
    scenarios = cfg.scenarios or [SubjectScenario()]
    if not 0 <= args.scenario < len(scenarios):
        raise ConfigError(f"scenario index {args.scenario} out of range (have {len(scenarios)})")
    sc = scenarios[args.scenario]
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    if args.duration is not None:
        sc = dataclasses.replace(sc, duration_s=args.duration)
    frames = synthesize_frames(cfg.radar, sc)
    save_frames(frames, args.out)
    log.info("wrote %d frames to %s", len(frames), args.out)
    return 0


def cmd_run(args):
    cfg = _config(args)
    frames = load_frames(args.input)
    result = harness.run_pipeline(cfg, frames, _model(args, cfg))
    if args.out and args.out != "-":
        with open(args.out, "w") as fh:
            harness.write_jsonl(result.records, fh)
    else:
        harness.write_jsonl(result.records, sys.stdout)
    if args.debug_dir:
        harness.write_debug_dumps(args.debug_dir, result)
        w = result.last_window
        harness.emit_figure_data(args.debug_dir, (), w.spectrum if w else None,
                                 w.peaks if w else ())
    return 0


def cmd_eval(args):
    if args.ensemble:
        return _eval_ensemble(args)
    if not (args.estimates and args.truth):
        raise ConfigError("eval needs --estimates and --truth (or --ensemble N)")
    records = harness.read_jsonl(args.estimates)
    truth = harness.belt_truth(load_frames(args.truth))
    report = harness.evaluate(records, truth, args.technique, Path(args.estimates).stem)
    harness.write_report(args.out, [report])
    print(json.dumps({"technique": report.technique, "mae": report.mae,
                      "std": float(report.std_values[0]), "n": report.n_samples}))
    return 0


def _eval_ensemble(args):
    cfg = _config(args)
    techniques = tuple(args.techniques.split(","))
    model = _model(args, cfg) if "regressor" in techniques else None
    scenarios = harness.standing_scenarios(args.ensemble, seed=args.seed, config=cfg)
    reports = harness.run_ensemble(scenarios, cfg, techniques, model)
    harness.write_report(args.out, list(reports.values()))
    for name, rep in reports.items():
        print(json.dumps({"technique": name, "mae": rep.mae,
                          "median_std": float(np.median(rep.std_values)),
                          "subjects": len(rep.subjects)}))
    return 0


def cmd_train(args):
    cfg = _config(args)
    rates = harness.mid_heavy_rates(args.subjects, args.seed, args.mid_fraction)
    scenarios = harness.standing_scenarios(len(rates), seed=args.seed, config=cfg,
                                           rates=rates, samples=args.samples)
    data = harness.regressor_corpus(scenarios, cfg, every=args.every)
    result = regressor_train(data, lr=args.lr, epochs=args.epochs, seed=args.seed)
    save_model(result.model, args.out)
    print(json.dumps({"examples": len(data), "final_loss": result.losses[-1] if result.losses else None}))
    return 0


def cmd_bench(args):
    cfg = _config(args)
    if args.input:
        frames = load_frames(args.input)
    else:
        frames = synthesize_frames(cfg.radar, SubjectScenario(duration_s=args.duration))
    res = harness.bench(cfg, frames, _model(args, cfg))
    print(json.dumps({"frames": res.n_frames, "mean_ms": res.mean_ms, "p99_ms": res.p99_ms,
                      "budget_ms": res.budget_ms, "within_budget": res.within_budget}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rrsense", description="Radar respiratory-rate pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, estimator=True):
        sp.add_argument("--config", help="INI configuration file")
        if estimator:
            sp.add_argument("--estimator", choices=harness.ESTIMATORS)
            sp.add_argument("--model", help="RRNN model file for the regressor estimator")

    s = sub.add_parser("synth", help="synthesise a frame recording")
    common(s, estimator=False)
    s.add_argument("--out", required=True)
    s.add_argument("--scenario", type=int, default=0, help="index of the scenario in the config")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float, help="override duration in seconds")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="stream a recording to JSON-lines estimates")
    common(s)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", help="JSON-lines output (default stdout)")
    s.add_argument("--debug-dir", help="write intermediate CSV dumps here")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="score estimates against belt-style truth")
    common(s)
    s.add_argument("--estimates", help="JSON-lines estimate stream")
    s.add_argument("--truth", help="frame recording carrying the truth record")
    s.add_argument("--technique", default="estimate")
    s.add_argument("--ensemble", type=int, metavar="N", help="score N synthetic standing subjects")
    s.add_argument("--techniques", default="classical,adaptive_kalman")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("train-regressor", help="train the rate regressor on synthetic data")
    common(s, estimator=False)
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int, default=100)
    s.add_argument("--samples", type=int, default=200, help="analysis windows per subject")
    s.add_argument("--every", type=int, default=10, help="keep every Nth window")
    s.add_argument("--mid-fraction", type=float, default=0.9,
                   help="share of training subjects breathing at 15-24 bpm")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("bench", help="per-sample latency against the real-time budget")
    common(s)
    s.add_argument("--in", dest="input", help="recording (default: synthesise one)")
    s.add_argument("--duration", type=float, default=60.0)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RRSenseError, OSError) as exc:
        print(f"rrsense: error: {exc}", file=sys.stderr)
        return 1
