import json
import os

import numpy as np
import pytest

from reliakit import core, shift
from reliakit.cli import EXIT_ERROR, EXIT_GATE_FAIL, EXIT_OK, main
from reliakit.monitor import load_event_log

from fixtures import GENERATOR, cls_record, label_shift_logs, pedestrian_suite, write_json


def simulate(tmp_path, seed=3, n=200):
    gen = write_json(tmp_path / "gen.yaml", GENERATOR)
    log = tmp_path / "sim.jsonl"
    rc = main(["simulate", "--generator", str(gen), "--n", str(n), "--seed", str(seed),
               "--output", str(log), "--model-out", str(tmp_path / "model.json"), "--quiet"])
    assert rc == EXIT_OK
    return log


def sim_suite(tmp_path):
    simulate(tmp_path)
    cfg = {
        "datasets": {"sim": {"path": "sim.jsonl", "kind": "classification"}},
        "tests": [{"name": "error_rate", "dataset": "sim", "metric": "zero_one_error", "threshold": 0.5},
                  {"name": "nll", "dataset": "sim", "metric": "nll"}],
        "calibration": [{"name": "cal", "dataset": "sim", "temperature": True}],
        "monitors": [{"name": "lowconf", "dataset": "sim", "metric": "max_prob", "rule": "threshold", "theta": 0.6}],
        "shift": [{"name": "self", "kind": "label_test", "source": "sim", "target": "sim"}],
        "adversarial": [{"name": "adv", "dataset": "sim", "model": "model.json", "loss": "zero_one_error",
                         "perturbation": {"kind": "linf", "epsilon": 0.2}, "budget": 10}],
    }
    return write_json(tmp_path / "suite.yaml", cfg)


def test_simulate_writes_predictions(tmp_path):
    recs = core.load_log(simulate(tmp_path))
    assert len(recs) == 200 and recs[0].kind == "classification"
    assert recs[0].features is not None and recs[0].truth is not None
    assert json.loads((tmp_path / "model.json").read_text())["task"] == "classification"


def test_simulate_deterministic(tmp_path):
    a = simulate(tmp_path, seed=5).read_bytes()
    b = simulate(tmp_path, seed=5).read_bytes()
    c = simulate(tmp_path, seed=6).read_bytes()
    assert a == b != c


def test_evaluate_deterministic_and_deployable(tmp_path):
    suite = sim_suite(tmp_path)
    assert main(["evaluate", str(suite), "--output", str(tmp_path / "r1"), "--quiet"]) == EXIT_OK
    assert main(["evaluate", str(suite), "--output", str(tmp_path / "r2"), "--quiet", "--workers", "3"]) == EXIT_OK
    a = (tmp_path / "r1" / "report.json").read_bytes()
    assert a == (tmp_path / "r2" / "report.json").read_bytes()
    rep = json.loads(a)
    assert rep["provenance"]["config_sha256"] and rep["deployable"] is True
    assert set(rep) >= {"suite", "calibration", "monitors", "shift", "adversarial"}
    md = (tmp_path / "r1" / "report.md").read_text()
    assert "## Satisficing tests" in md and "## Optimizing tests" in md
    events = load_event_log(tmp_path / "r1" / "events.jsonl")
    assert len(events) == rep["monitors"]["lowconf"]["events"]


def test_evaluate_gate_failure_names_case(tmp_path, capsys):
    suite = pedestrian_suite(str(tmp_path), miss_one=True)
    assert main(["evaluate", str(suite), "--output", str(tmp_path / "out")]) == EXIT_GATE_FAIL
    assert "FAIL pedestrian_recall" in capsys.readouterr().out
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["deployable"] is False


def test_evaluate_gate_pass(tmp_path):
    suite = pedestrian_suite(str(tmp_path), miss_one=False)
    assert main(["evaluate", str(suite), "--output", str(tmp_path / "out"), "--quiet"]) == EXIT_OK


def test_evaluate_errors(tmp_path, capsys):
    suite = pedestrian_suite(str(tmp_path))
    os.remove(tmp_path / "det.jsonl")
    assert main(["evaluate", str(suite), "--output", str(tmp_path / "out")]) == EXIT_ERROR
    bad = write_json(tmp_path / "bad.yaml", {"datasets": {}, "tests": [{"name": "x"}]})
    capsys.readouterr()
    assert main(["evaluate", str(bad)]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert err.count("config error") >= 2
    assert main(["evaluate"]) == EXIT_ERROR


def test_monitor_command(tmp_path):
    log = tmp_path / "conf.jsonl"
    recs = [cls_record(i, [c, 1 - c]) for i, c in enumerate([0.99, 0.90, 0.90, 0.90])]
    core.write_log(log, recs, "classification")
    events = tmp_path / "events.jsonl"
    rc = main(["monitor", str(log), "--rule", "consecutive", "--theta", "0.95", "--m", "3",
               "--event-log", str(events), "--quiet"])
    assert rc == EXIT_OK
    (ev,) = load_event_log(events)
    assert ev.index == 3 and ev.kind.value == "ConsecutiveRule"


def test_shift_command_matches_library(tmp_path):
    src, tgt, _ = label_shift_logs(str(tmp_path), n=1000)
    out = tmp_path / "weights.json"
    assert main(["shift", src, tgt, "--task", "label_shift", "--output", str(out)]) == EXIT_OK
    got = json.loads(out.read_text())
    s, t = core.load_log(src), core.load_log(tgt)
    est = shift.estimate_label_shift(shift.ConfusionMatrix.from_records(s), shift.predicted_distribution(t, 3))
    assert got["weights"] == list(est.weights)


def test_calibrate_formats(tmp_path):
    log = simulate(tmp_path)
    out = tmp_path / "cal.json"
    assert main(["calibrate", str(log), "--output", str(out)]) == EXIT_OK
    res = json.loads(out.read_text())
    assert res["temperature"] > 0 and 0 <= res["ece_after"] <= 1
    csv_out = tmp_path / "bins.csv"
    assert main(["calibrate", str(log), "--format", "csv", "--output", str(csv_out)]) == EXIT_OK
    assert csv_out.read_text().startswith("lower,upper")


def test_advtest(tmp_path):
    log = simulate(tmp_path)
    out = tmp_path / "adv.json"
    rc = main(["advtest", "--log", str(log), "--model", str(tmp_path / "model.json"),
               "--perturbation", "linf:0", "--output", str(out)])
    assert rc == EXIT_OK
    res = json.loads(out.read_text())
    assert res["value"] == res["clean_risk"] and res["lower_bound"] is True
    assert main(["advtest", "--log", str(log), "--perturbation", "linf:0.1"]) == EXIT_ERROR


def test_report_rerender(tmp_path, capsys):
    suite = pedestrian_suite(str(tmp_path))
    main(["evaluate", str(suite), "--output", str(tmp_path / "out"), "--quiet"])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "out" / "report.json"), "--format", "markdown"]) == EXIT_OK
    assert capsys.readouterr().out == (tmp_path / "out" / "report.md").read_text()


def test_bad_seed(tmp_path):
    gen = write_json(tmp_path / "gen.yaml", GENERATOR)
    assert main(["simulate", "--generator", str(gen), "--seed", "-1", "--output", str(tmp_path / "x")]) == EXIT_ERROR
