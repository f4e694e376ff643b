import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from make_golden import HERE, build
from deepnp.channel import GEParams
from deepnp.harness import (ExperimentSpec, config_hash, emit_plotdata, row_seeds, run_experiment,
                            sweep_points, window_mae)
from deepnp.neural import TrainConfig
from deepnp.protocol import SessionConfig
from deepnp.cli import main

SYMMETRIC = GEParams(0.1, 0.9, 0.1, 0.1)


def small_spec(tmp_path, **kw):
    base = dict(channel=SYMMETRIC, session=SessionConfig(rtt=5, total_slots=800),
                repetitions=3, trace_length=2500, output_dir=str(tmp_path), seed=5)
    base.update(kw)
    return ExperimentSpec(**base)


def test_empty_sweep_gives_repetitions_rows(tmp_path):
    rows = run_experiment(small_spec(tmp_path))
    assert len(rows) == 3
    assert [r["repetition"] for r in rows] == [0, 1, 2]
    assert len({r["seed"] for r in rows}) == 3


def test_rows_carry_provenance(tmp_path):
    run_experiment(small_spec(tmp_path, predictor_kind="mean"))
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        assert r["seed"] and r["config_hash"] and r["predictor"] == "mean"
        assert 0 < float(r["eta"]) <= 1


def test_invalid_specs():
    with pytest.raises(ValueError):
        small_spec(".", sweep=[("session.nope", [1])])
    with pytest.raises(ValueError):
        small_spec(".", sweep=[("session.rtt", [])])
    with pytest.raises(ValueError):
        small_spec(".", repetitions=0)
    with pytest.raises(ValueError):
        small_spec(".", predictor_kind="oracle")


def test_predictor_kinds_share_points():
    spec = small_spec(".", sweep=[("channel.q", [0.1, 0.2]), ("predictor_kind", ["stat", "genie"])])
    pts = [(p, a["predictor_kind"], a["channel.q"]) for p, a, _ in sweep_points(spec)]
    assert pts == [(0, "stat", 0.1), (0, "genie", 0.1), (1, "stat", 0.2), (1, "genie", 0.2)]
    resolved = [s for _, _, s in sweep_points(spec)]
    assert resolved[2].channel.q == 0.2 and resolved[1].predictor_kind == "genie"


def test_seed_schedule():
    assert row_seeds(1, 0, 0) == row_seeds(1, 0, 0)
    assert len({row_seeds(1, p, r) for p in range(4) for r in range(4)}) == 16
    assert row_seeds(1, 0, 0) != row_seeds(2, 0, 0)


def test_config_hash_ignores_output_dir():
    a = small_spec("a")
    b = small_spec("b")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(small_spec("a", m=4))


def test_divergence_marks_row_failed(tmp_path, monkeypatch):
    import deepnp.harness as harness
    from deepnp.neural import TrainingDiverged, TrainReport

    def boom(*a, **k):
        raise TrainingDiverged(TrainReport(train_loss=[math.nan]))

    monkeypatch.setattr(harness, "train", boom)
    spec = small_spec(tmp_path, sweep=[("predictor_kind", ["deepnp", "stat"])], repetitions=1)
    rows = run_experiment(spec)
    assert [r["status"] for r in rows] == ["failed", "ok"]
    paths = emit_plotdata(rows, tmp_path / "plot")
    text = (tmp_path / "plot" / "eta.csv").read_text()
    assert "deepnp" not in text and "stat" in text


def _rows(values, series="stat"):
    return [{"predictor": series, "eta": v, "delay_mean": 1.0, "delay_max": 2.0,
             "predictor_mae": 0.5, "sweep": "{}", "status": "ok"} for v in values]


def read_plot(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_plotdata_single_row(tmp_path):
    emit_plotdata(_rows([0.4]), tmp_path)
    (row,) = read_plot(tmp_path / "eta.csv")
    assert float(row["mean"]) == 0.4 and float(row["stderr"]) == 0.0 and row["n"] == "1"


def test_plotdata_stderr_definition(tmp_path):
    vals = [0.1, 0.3, 0.2, 0.6, 0.5]
    emit_plotdata(_rows(vals), tmp_path)
    (row,) = read_plot(tmp_path / "eta.csv")
    mean = sum(vals) / 5
    sd = math.sqrt(sum((v - mean) ** 2 for v in vals) / 4)
    assert float(row["stderr"]) == pytest.approx(sd / math.sqrt(5), rel=1e-12)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "delay_max.csv", "delay_mean.csv", "eta.csv", "predictor_mae.csv"]
    with pytest.raises(ValueError):
        emit_plotdata([], tmp_path)


def test_window_mae():
    eps = np.array([0.0, 0.0, 0.5, 1.0])
    erased = np.array([0, 1, 0, 0], dtype=bool)
    # rtt=2, t=1: predicted 2, actual 1; t=2: 1 vs 1; t=3: 0 vs 2
    assert window_mae(eps, erased, 2, 0) == pytest.approx((1 + 0 + 2) / 3)


def test_golden_experiment_byte_identical(tmp_path):
    build(tmp_path)
    golden = HERE / "small"
    files = sorted(p.relative_to(golden) for p in golden.rglob("*.csv"))
    assert files
    for rel in files:
        assert (tmp_path / rel).read_bytes() == (golden / rel).read_bytes(), rel


def test_cli_subcommands(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "channel": {"e_G": 0.1, "e_B": 0.9, "q": 0.1, "s": 0.1},
        "session": {"rtt": 3, "total_slots": 500},
        "train": {"max_epochs": 2}, "m": 2, "repetitions": 1, "trace_length": 2000,
    }))
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    assert (out / "predictor.json").exists() and (out / "training.csv").exists()
    assert main(["evaluate", "--config", str(cfg), "--out", str(out), "--seed", "4",
                 "--params", str(out / "predictor.json")]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--predictor", "deepnp",
                 "--params", str(out / "predictor.json")]) == 0
    header = (out / "slots.csv").read_text().splitlines()[0]
    assert header == "slot,action,w_min,w_max,erased,feedback_bit,delta,eps_hat"
    assert (out / "metrics.csv").read_text().startswith("eta,delay_mean,delay_max,delivered,transmissions")
    assert main(["sweep", "--config", str(cfg), "--out", str(out / "s"), "--predictor", "genie"]) == 0
    assert (out / "s" / "plotdata" / "eta.csv").exists()
    assert main(["sweep", "--config", str(tmp_path / "missing.json")]) == 1
