"""Experiment orchestration: sweeps, repetitions, results and plot data."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import GEParams, generate_trace, steady_state_erasure
from .estimators import GeniePredictor, MeanPredictor, StatPredictor
from .neural import NeuralPredictor, TrainConfig, TrainingDiverged, train
from .protocol import SessionConfig, run_session

log = logging.getLogger(__name__)

PREDICTOR_KINDS = ("stat", "deepnp", "genie", "mean")
METRICS = ("eta", "delay_mean", "delay_max", "predictor_mae")

RESULT_COLUMNS = (
    "row", "point", "repetition", "predictor", "sweep", "seed", "config_hash",
    "e_nominal", "capacity", "eta", "delay_mean", "delay_max", "delivered",
    "transmissions", "predictor_mae", "train_best_epoch", "status", "error",
)


@dataclass
class ExperimentSpec:
    channel: GEParams
    session: SessionConfig
    predictor_kind: str = "stat"
    train: TrainConfig = field(default_factory=TrainConfig)
    m: int = 5
    sweep: list = field(default_factory=list)  # [(dotted name, [values...]), ...]
    repetitions: int = 5
    output_dir: str = "results"
    trace_length: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.predictor_kind not in PREDICTOR_KINDS:
            raise ValueError(f"unknown predictor kind {self.predictor_kind!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        self.sweep = [(name, list(values)) for name, values in self.sweep]
        for name, values in self.sweep:
            if not values:
                raise ValueError(f"sweep over {name} has no values")
            _check_name(self, name)

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentSpec:
        doc = dict(doc)
        kw = {
            "channel": GEParams(**doc.pop("channel")),
            "session": SessionConfig(**doc.pop("session")),
        }
        if "train" in doc:
            kw["train"] = TrainConfig(**doc.pop("train"))
        kw.update(doc)
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "channel": dataclasses.asdict(self.channel),
            "session": dataclasses.asdict(self.session),
            "predictor_kind": self.predictor_kind,
            "train": dataclasses.asdict(self.train),
            "m": self.m,
            "sweep": [[n, list(v)] for n, v in self.sweep],
            "repetitions": self.repetitions,
            "output_dir": self.output_dir,
            "trace_length": self.trace_length,
            "seed": self.seed,
        }


def _check_name(spec: ExperimentSpec, name: str) -> None:
    head, _, rest = name.partition(".")
    if head in ("channel", "session", "train") and rest:
        if rest in {f.name for f in dataclasses.fields(getattr(spec, head))}:
            return
    elif head in ("predictor_kind", "m", "trace_length") and not rest:
        return
    raise ValueError(f"unknown sweep parameter {name!r}")


def _resolve(spec: ExperimentSpec, name: str, value) -> ExperimentSpec:
    """Copy of ``spec`` with the dotted field ``name`` set to ``value``."""
    head, _, rest = name.partition(".")
    if rest:
        value = dataclasses.replace(getattr(spec, head), **{rest: value})
    return dataclasses.replace(spec, **{head: value})


def sweep_points(spec: ExperimentSpec):
    """Yield ``(point_index, assignments, resolved_spec)``.

    ``predictor_kind`` does not advance the point index, so every predictor
    at a given point sees the same channel traces.
    """
    names = [n for n, _ in spec.sweep]
    data_dims = [i for i, n in enumerate(names) if n != "predictor_kind"]
    combos = list(itertools.product(*(v for _, v in spec.sweep))) or [()]
    keys = []
    for combo in combos:
        key = tuple(combo[i] for i in data_dims)
        if key not in keys:
            keys.append(key)
    for combo in combos:
        resolved = spec
        for name, value in zip(names, combo):
            resolved = _resolve(resolved, name, value)
        point = keys.index(tuple(combo[i] for i in data_dims))
        yield point, dict(zip(names, combo)), resolved


def row_seeds(base_seed: int, point: int, repetition: int) -> tuple[int, int, int]:
    """Independent (channel, training, session) seeds for one row."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(point, repetition))
    a, b, c = ss.generate_state(3, dtype=np.uint64)
    return int(a), int(b), int(c)


def config_hash(spec: ExperimentSpec) -> str:
    doc = spec.to_dict()
    for volatile in ("output_dir", "sweep", "repetitions"):
        doc.pop(volatile)
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def window_mae(eps_hat, erased, rtt: int, start: int) -> float:
    """Mean |predicted - actual| delivered slots over the RTT window each
    estimate was made for (slots ``t-rtt+1 .. t``), for ``t >= start``."""
    eps_hat = np.asarray(eps_hat, dtype=float)
    delivered = 1.0 - np.asarray(erased, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(delivered)])
    t = np.arange(max(start, rtt - 1), len(eps_hat))
    if t.size == 0:
        return math.nan
    actual = csum[t + 1] - csum[t + 1 - rtt]
    return float(np.abs(rtt * (1.0 - eps_hat[t]) - actual).mean())


def make_predictor(kind: str, spec: ExperimentSpec, train_bits, session_trace, train_seed: int):
    """Build the erasure-rate provider for one row; returns (provider, report)."""
    rtt = spec.session.rtt
    if kind == "stat":
        return StatPredictor(), None
    if kind == "mean":
        return MeanPredictor(), None
    if kind == "genie":
        return GeniePredictor(session_trace, rtt), None
    cfg = dataclasses.replace(spec.train, seed=train_seed)
    params, report = train(train_bits, spec.m, rtt, cfg)
    return NeuralPredictor(params), report


def run_row(spec: ExperimentSpec, point: int, repetition: int) -> dict:
    ch_seed, tr_seed, se_seed = row_seeds(spec.seed, point, repetition)
    kind = spec.predictor_kind
    row = {
        "point": point, "repetition": repetition, "predictor": kind,
        "seed": ch_seed, "config_hash": config_hash(spec),
        "e_nominal": steady_state_erasure(spec.channel),
        "status": "ok", "error": "",
    }
    erased = generate_trace(spec.channel, spec.trace_length, ch_seed)
    cut = int(spec.trace_length * spec.train.split)
    session_trace = erased[cut:cut + spec.session.total_slots]
    row["capacity"] = float(1.0 - session_trace.mean())
    try:
        predictor, report = make_predictor(kind, spec, (~erased[:cut]).astype(np.int8), session_trace, tr_seed)
    except TrainingDiverged as exc:
        log.warning("point %d rep %d: %s", point, repetition, exc)
        row.update(status="failed", error=str(exc))
        return row
    if report is not None:
        row["train_best_epoch"] = report.best_epoch
    config = dataclasses.replace(spec.session, total_slots=len(session_trace), seed=se_seed)
    result = run_session(config, session_trace, predictor)
    metrics = result.metrics
    row.update(metrics.as_row())
    row["predictor_mae"] = window_mae(result.trace.eps_hat, session_trace, config.rtt, config.rtt + spec.m)
    if metrics.degenerate:
        row["status"] = "degenerate"
    return row


def run_experiment(spec: ExperimentSpec, write: bool = True) -> list[dict]:
    """Every sweep point x repetition; rows in deterministic order."""
    rows = []
    for point, assignment, resolved in sweep_points(spec):
        for rep in range(spec.repetitions):
            log.info("point %d %s rep %d", point, assignment, rep)
            row = run_row(resolved, point, rep)
            row["sweep"] = json.dumps(assignment, sort_keys=True)
            for name, value in assignment.items():
                row[name] = value
            row["row"] = len(rows)
            rows.append(row)
    if write:
        out = Path(spec.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results(out / "results.csv", rows, [n for n, _ in spec.sweep])
    return rows


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_results(path: str | Path, rows: list[dict], sweep_names=()) -> None:
    columns = list(RESULT_COLUMNS) + [n for n in sweep_names if n not in RESULT_COLUMNS]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(columns)
        for row in rows:
            out.writerow([_cell(row.get(c)) for c in columns])


def emit_plotdata(rows: list[dict], out_dir: str | Path, x: str | None = None) -> list[Path]:
    """One CSV per metric with columns ``x, series, mean, stderr, n``.

    ``x`` defaults to the first swept parameter other than the predictor
    kind. Groups keep the order in which they first appear in ``rows``;
    failed rows are skipped. ``stderr`` is the sample standard deviation
    over repetitions divided by sqrt(n) (0 for a single repetition).
    """
    if not rows:
        raise ValueError("no result rows")
    if x is None:
        names = [n for n in json.loads(rows[0].get("sweep") or "{}") if n != "predictor_kind"]
        x = names[0] if names else None
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        if row.get("status") == "failed":
            continue
        key = (row.get(x, "") if x else "", row["predictor"])
        groups.setdefault(key, []).append(row)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in METRICS:
        path = out / f"{metric}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "series", "mean", "stderr", "n"])
            for (xv, series), members in groups.items():
                vals = np.array([float(r.get(metric, math.nan)) for r in members])
                vals = vals[~np.isnan(vals)]
                if vals.size == 0:
                    continue
                se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
                w.writerow([_cell(xv), series, repr(float(vals.mean())), repr(se), vals.size])
        paths.append(path)
    return paths
