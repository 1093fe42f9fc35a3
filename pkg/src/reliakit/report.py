"""Run a suite configuration end to end and render the resulting report.

The structured report is canonical JSON so identical inputs give identical
bytes. The markdown rendering splits satisficing and optimizing tests into
two tables.
"""
from __future__ import annotations

import json
import os
from typing import Any

import numpy as np

from . import __version__, calibration, core, monitor, shift
from .adversarial import LinearModelAdapter, adversarial_risk_estimate, perturbation_from_dict
from .config import SuiteConfig, canonical_json
from .losses import get_metric
from .synth import LinearModel
from .testcase import run_suite

REPORT_JSON = "report.json"
REPORT_MD = "report.md"
EVENTS = "events.jsonl"


def load_datasets(cfg: SuiteConfig) -> dict[str, list[core.PredictionRecord]]:
    return {
        name: core.load_log(cfg.path(d["path"]), d.get("kind"))
        for name, d in sorted(cfg.datasets.items())
    }


def metric_stream(records, metric_name: str) -> list[tuple[int, float]]:
    """(index, value) pairs in record order.

    Records still waiting for delayed truth are skipped by truth-needing
    metrics; they join the stream under their own index once labelled.
    """
    metric = get_metric(metric_name)
    if metric.needs_truth:
        records = [r for r in records if r.truth is not None]
    return [(r.index, float(metric(r))) for r in records]


def run_monitors(cfg: SuiteConfig, data, events_path: str | None) -> dict:
    out = {}
    for spec in cfg.section("monitors"):
        stream = metric_stream(data[spec["dataset"]], spec["metric"])
        nominal = None
        if spec["rule"] == "zscore":
            n_nom = spec["nominal"]
            nominal = [v for _, v in stream[:n_nom]]
            stream = stream[n_nom:]
        mon = monitor.make_monitor(spec, nominal)
        events = mon.feed(stream)
        if events_path is not None:
            monitor.append_event_log(events_path, events)
        out[spec["name"]] = {
            "rule": spec["rule"],
            "metric": spec["metric"],
            "events": len(events),
            "first_index": events[0].index if events else None,
            "indices": [e.index for e in events],
        }
    return out


def run_calibration(cfg: SuiteConfig, data) -> dict:
    out = {}
    for spec in cfg.section("calibration"):
        records = core.slice(data[spec["dataset"]], cfg.slices[spec.get("slice", "all")])
        rep = calibration.ece(records, spec.get("n_bins", 15), spec.get("scheme", "equal_width"))
        entry: dict[str, Any] = rep.to_dict()
        if spec.get("temperature"):
            t = calibration.fit_temperature(records)
            entry["temperature"] = t.t
            logits, labels = calibration.logits_and_labels(records)
            scaled = calibration._softmax(logits / t.t)
            conf = scaled.max(axis=1)
            correct = (scaled.argmax(axis=1) == labels).astype(float)
            k = scaled.shape[1]
            entry["ece_after_temperature"] = calibration.ece_from_arrays(
                conf, correct, spec.get("n_bins", 15), spec.get("scheme", "equal_width"), 1.0 / k
            ).ece
        out[spec["name"]] = entry
    return out


def label_shift_task(source, target, ridge: bool = False) -> dict:
    cm = shift.ConfusionMatrix.from_records(source)
    mu = shift.predicted_distribution(target, cm.n_classes)
    return shift.estimate_label_shift(cm, mu, ridge=ridge).to_dict()


def label_test_task(source, target) -> dict:
    k = len(core.class_probs(source[0]))
    hs = np.bincount([core.predicted_label(r) for r in source], minlength=k)
    ht = np.bincount([core.predicted_label(r) for r in target], minlength=k)
    res = shift.label_shift_test(hs, ht)
    res["source_hist"] = hs.tolist()
    res["target_hist"] = ht.tolist()
    return res


def run_shift(cfg: SuiteConfig, data, seed: int) -> dict:
    out = {}
    for spec in cfg.section("shift"):
        src, tgt = data[spec["source"]], data[spec["target"]]
        kind = spec["kind"]
        if kind == "label_shift":
            res = label_shift_task(src, tgt, spec.get("ridge", False))
        elif kind == "label_test":
            res = label_test_task(src, tgt)
        elif kind == "importance":
            w = shift.importance_weights(core.features_matrix(src), core.features_matrix(tgt), seed)
            res = {"mean_weight": float(w.mean()), "min_weight": float(w.min()), "max_weight": float(w.max())}
        else:
            scores = shift.ood_knn_scores(core.features_matrix(src), core.features_matrix(tgt), spec.get("k", 10))
            res = {"k": spec.get("k", 10), "mean_score": float(scores.mean()), "max_score": float(scores.max())}
        out[spec["name"]] = {"kind": kind, **res}
    return out


def load_linear_model(path: str) -> LinearModel:
    with open(path, encoding="utf-8") as fh:
        return LinearModel.from_dict(json.load(fh))


def run_adversarial(cfg: SuiteConfig, data, seed: int) -> dict:
    out = {}
    for spec in cfg.section("adversarial"):
        model = LinearModelAdapter(load_linear_model(cfg.path(spec["model"])))
        est = adversarial_risk_estimate(
            model, data[spec["dataset"]], spec["loss"], perturbation_from_dict(spec["perturbation"]),
            spec.get("budget"), seed,
        )
        out[spec["name"]] = est.to_dict()
    return out


def run(cfg: SuiteConfig, seed: int | None = None, workers: int | None = None,
        events_path: str | None = None) -> dict:
    seed = cfg.seed if seed is None else seed
    data = load_datasets(cfg)
    suite = run_suite(cfg.tests, data, workers or cfg.workers)
    return {
        "provenance": {
            "config_sha256": cfg.hash,
            "seed": seed,
            "toolkit_version": __version__,
        },
        "suite": suite.to_dict(),
        "deployable": suite.deployable,
        "calibration": run_calibration(cfg, data),
        "monitors": run_monitors(cfg, data, events_path),
        "shift": run_shift(cfg, data, seed),
        "adversarial": run_adversarial(cfg, data, seed),
    }


def dumps(report: dict) -> str:
    return canonical_json(report) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_markdown(report: dict) -> str:
    prov = report["provenance"]
    lines = [
        "# Reliability report",
        "",
        f"- config sha256: `{prov['config_sha256']}`",
        f"- seed: {prov['seed']}",
        f"- toolkit version: {prov['toolkit_version']}",
        f"- deployable: **{'yes' if report['deployable'] else 'no'}**",
        "",
    ]
    outcomes = report["suite"]["outcomes"]
    sat = [o for o in outcomes if o["satisficing"]]
    opt = [o for o in outcomes if not o["satisficing"]]
    lines += ["## Satisficing tests", ""]
    if sat:
        lines += ["| test | metric | score | n | verdict |", "|---|---|---|---|---|"]
        lines += [f"| {o['case']} | {o['metric']} | {_fmt(o['score'])} | {o['n']} | {o['verdict'].upper()} |" for o in sat]
    else:
        lines.append("_none_")
    lines += ["", "## Optimizing tests", ""]
    if opt:
        lines += ["| test | metric | score | n |", "|---|---|---|---|"]
        lines += [f"| {o['case']} | {o['metric']} | {_fmt(o['score'])} | {o['n']} |" for o in opt]
    else:
        lines.append("_none_")
    for w in report["suite"].get("warnings", []):
        lines += ["", f"> warning: {w}"]
    if report.get("calibration"):
        lines += ["", "## Calibration", "", "| task | ECE | n | temperature |", "|---|---|---|---|"]
        for name, c in report["calibration"].items():
            lines.append(f"| {name} | {_fmt(c['ece'])} | {c['n']} | {_fmt(c.get('temperature', '-'))} |")
    if report.get("monitors"):
        lines += ["", "## Monitors", "", "| monitor | rule | metric | events | first index |", "|---|---|---|---|---|"]
        for name, m in report["monitors"].items():
            lines.append(f"| {name} | {m['rule']} | {m['metric']} | {m['events']} | {_fmt(m['first_index'])} |")
    if report.get("shift"):
        lines += ["", "## Shift", ""]
        for name, s in report["shift"].items():
            detail = ", ".join(f"{k}={_fmt(v)}" for k, v in s.items() if k != "kind")
            lines.append(f"- {name} ({s['kind']}): {detail}")
    if report.get("adversarial"):
        lines += ["", "## Adversarial risk (search lower bound)", "", "| task | lower bound | clean risk | n |", "|---|---|---|---|"]
        for name, a in report["adversarial"].items():
            lines.append(f"| {name} | {_fmt(a['value'])} | {_fmt(a['clean_risk'])} | {a['n']} |")
    return "\n".join(lines) + "\n"


def write_report(report: dict, outdir: str) -> tuple[str, str]:
    os.makedirs(outdir, exist_ok=True)
    jpath = os.path.join(outdir, REPORT_JSON)
    mpath = os.path.join(outdir, REPORT_MD)
    with open(jpath, "w", encoding="utf-8") as fh:
        fh.write(dumps(report))
    with open(mpath, "w", encoding="utf-8") as fh:
        fh.write(render_markdown(report))
    return jpath, mpath
