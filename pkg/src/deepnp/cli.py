"""Command line entry point: ``deepnp {simulate,train,evaluate,sweep}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .channel import generate_trace
from .harness import PREDICTOR_KINDS, ExperimentSpec, emit_plotdata, make_predictor, row_seeds, run_experiment, window_mae
from .neural import NeuralPredictor, load_params, make_dataset, mae_per_rtt, mean_predictor_mae, save_params, train
from .protocol import run_session, write_metrics_csv


def _spec(args) -> ExperimentSpec:
    spec = ExperimentSpec.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.predictor is not None:
        changes["predictor_kind"] = args.predictor
    if args.out is not None:
        changes["output_dir"] = args.out
    return dataclasses.replace(spec, **changes) if changes else spec


def _split_trace(spec: ExperimentSpec):
    ch_seed, tr_seed, se_seed = row_seeds(spec.seed, 0, 0)
    erased = generate_trace(spec.channel, spec.trace_length, ch_seed)
    cut = int(spec.trace_length * spec.train.split)
    return erased, cut, tr_seed, se_seed


def _train(spec: ExperimentSpec, erased, cut, tr_seed):
    cfg = dataclasses.replace(spec.train, seed=tr_seed)
    return train((~erased[:cut]).astype(np.int8), spec.m, spec.session.rtt, cfg), cfg


def cmd_simulate(args) -> int:
    spec = _spec(args)
    erased, cut, tr_seed, se_seed = _split_trace(spec)
    session_trace = erased[cut:cut + spec.session.total_slots]
    if spec.predictor_kind == "deepnp" and args.params:
        predictor = NeuralPredictor(load_params(args.params))
    else:
        predictor, _ = make_predictor(spec.predictor_kind, spec, (~erased[:cut]).astype(np.int8),
                                      session_trace, tr_seed)
    config = dataclasses.replace(spec.session, total_slots=len(session_trace), seed=se_seed)
    result = run_session(config, session_trace, predictor)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.trace.write_csv(out / "slots.csv")
    write_metrics_csv(out / "metrics.csv", result.metrics)
    m = result.metrics
    print(f"{spec.predictor_kind}: eta={m.eta:.4f} delay_mean={m.delay_mean:.2f} "
          f"delay_max={m.delay_max:.0f} capacity={1 - session_trace.mean():.4f}")
    return 0


def cmd_train(args) -> int:
    spec = _spec(args)
    erased, cut, tr_seed, _ = _split_trace(spec)
    (params, report), cfg = _train(spec, erased, cut, tr_seed)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_params(out / "predictor.json", params, cfg)
    with open(out / "training.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_mae"])
        for i, (lo, va) in enumerate(zip(report.train_loss, report.val_mae)):
            w.writerow([i, repr(lo), repr(va)])
    print(f"best epoch {report.best_epoch}: val_mae={report.best_val_mae:.3f} "
          f"test_mae={report.test_mae:.3f} mean_baseline={report.baseline_mae:.3f}")
    return 0


def cmd_evaluate(args) -> int:
    """MAE per RTT on the held-out part of the predictor's training trace."""
    spec = _spec(args)
    erased, cut, tr_seed, _ = _split_trace(spec)
    bits = (~erased[:cut]).astype(np.int8)
    rtt = spec.session.rtt
    if args.params:
        params = load_params(args.params)
        if (params.m, params.rtt) != (spec.m, rtt):
            print(f"parameter file has m={params.m}, rtt={params.rtt}; config has m={spec.m}, rtt={rtt}",
                  file=sys.stderr)
            return 2
    else:
        (params, _), _ = _train(spec, erased, cut, tr_seed)
    X, Y = make_dataset(bits, spec.m, rtt)
    start = int(len(X) * spec.train.split)
    row = {
        "predictor": "deepnp",
        "mae": mae_per_rtt(params, X[start:], Y[start:]),
        "mean_baseline_mae": mean_predictor_mae(bits, spec.m, rtt, start=start),
        "examples": len(X) - start,
    }
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "evaluation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
    print(json.dumps(row))
    return 0


def cmd_sweep(args) -> int:
    spec = _spec(args)
    rows = run_experiment(spec)
    emit_plotdata(rows, Path(spec.output_dir) / "plotdata")
    failed = sum(r["status"] == "failed" for r in rows)
    print(f"{len(rows)} rows written to {spec.output_dir} ({failed} failed)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepnp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("simulate", cmd_simulate, "run one protocol session"),
        ("train", cmd_train, "train a predictor and save its parameters"),
        ("evaluate", cmd_evaluate, "held-out MAE per RTT of a predictor"),
        ("sweep", cmd_sweep, "full experiment: results.csv and plot data"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON experiment document")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--predictor", choices=PREDICTOR_KINDS)
        if name in ("simulate", "evaluate"):
            p.add_argument("--params", help="saved predictor parameters instead of training")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (OSError, ValueError) as exc:
        print(f"deepnp: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
