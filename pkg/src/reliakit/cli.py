"""Command-line interface.

Exit codes: 0 success (``evaluate``: deployable), 1 a satisficing test failed,
2 any error (bad config, missing file, invalid input).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np
import yaml

from . import adversarial, calibration, core, monitor, report, shift, synth
from .config import load_config
from .errors import ConfigError, ReliakitError

EXIT_OK, EXIT_GATE_FAIL, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("reliakit")


class CliError(ReliakitError):
    pass


def _load_mapping(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    if not isinstance(raw, dict):
        raise CliError(f"{path} must contain a mapping")
    return raw


def _emit(args, payload, text: str | None = None, csv_text: str | None = None) -> None:
    """Write ``payload`` in the requested format to --output or stdout."""
    fmt = args.format
    if fmt == "markdown" and text is not None:
        body = text
    elif fmt == "csv" and csv_text is not None:
        body = csv_text
    elif fmt in ("jsonlines", "markdown", "csv"):
        if fmt != "jsonlines":
            log.warning("format %s not available for this command; writing jsonlines", fmt)
        rows = payload if isinstance(payload, list) else [payload]
        body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    else:
        raise CliError(f"unknown format {fmt!r}")
    if args.output and args.output != "-":
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(body)
    elif not args.quiet:
        sys.stdout.write(body)


# -- evaluate -----------------------------------------------------------------


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    outdir = args.output or os.path.join(os.path.dirname(os.path.abspath(args.config)), "report")
    os.makedirs(outdir, exist_ok=True)
    events_path = os.path.join(outdir, report.EVENTS)
    open(events_path, "w", encoding="utf-8").close()
    rep = report.run(cfg, seed=args.seed, workers=args.workers, events_path=events_path)
    jpath, mpath = report.write_report(rep, outdir)
    failing = [o["case"] for o in rep["suite"]["outcomes"] if o["verdict"] == "fail"]
    if not args.quiet:
        status = "deployable" if rep["deployable"] else "NOT deployable"
        print(f"{status}; report written to {jpath} and {mpath}")
        for name in failing:
            print(f"FAIL {name}")
    return EXIT_OK if rep["deployable"] else EXIT_GATE_FAIL


def cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        rep = json.load(fh)
    if args.format == "markdown":
        _emit(args, rep, text=report.render_markdown(rep))
    else:
        _emit(args, rep)
    return EXIT_OK


# -- calibrate ----------------------------------------------------------------


def cmd_calibrate(args) -> int:
    records = core.load_log(args.log)
    before = calibration.ece(records, args.bins, args.scheme)
    payload = {"log": os.path.basename(args.log), "n": before.n, "ece": before.ece}
    md = [f"ECE ({args.scheme}, {args.bins} bins): {before.ece:.6g}"]
    if args.method == "temperature":
        t = calibration.fit_temperature(records)
        scaled = [
            _with_probs(r, calibration.apply_temperature(core.class_probs(r), t)) for r in records
        ]
        after = calibration.ece(scaled, args.bins, args.scheme)
        payload.update(temperature=t.t, ece_after=after.ece)
        md.append(f"temperature: {t.t:.6g}; ECE after scaling: {after.ece:.6g}")
        if args.write_log:
            core.write_log(args.write_log, scaled, "classification")
    payload["bins"] = [b.__dict__ for b in before.bins]
    _emit(args, payload, text="\n".join(md) + "\n", csv_text=calibration.bins_to_csv(before))
    return EXIT_OK


def _with_probs(r: core.PredictionRecord, p: core.ClassProbVector) -> core.PredictionRecord:
    from dataclasses import replace

    return replace(r, payload=core.ClassPrediction(p.argmax(), p))


# -- monitor ------------------------------------------------------------------


def cmd_monitor(args) -> int:
    records = core.load_log(args.log)
    if args.spec:
        spec = _load_mapping(args.spec)
    else:
        spec = {k: v for k, v in {
            "rule": args.rule, "theta": args.theta, "m": args.m, "z": args.z,
            "direction": args.direction, "delta": args.delta, "lambda": args.lam,
            "metric": args.metric, "nominal": args.nominal,
        }.items() if v is not None}
    spec.setdefault("name", spec.get("rule", "monitor"))
    spec.setdefault("metric", "max_prob")
    stream = report.metric_stream(records, spec["metric"])
    nominal = None
    if spec.get("rule") == "zscore":
        n_nom = int(spec.get("nominal") or 0)
        if n_nom < 2:
            raise CliError("zscore monitor needs --nominal N (>= 2) leading records")
        nominal = [v for _, v in stream[:n_nom]]
        stream = stream[n_nom:]
    mon = monitor.make_monitor(spec, nominal)
    events = mon.feed(stream)
    written = monitor.append_event_log(args.event_log, events) if args.event_log else 0
    rows = [e.to_dict() for e in events]
    md = "| index | kind | value | detail |\n|---|---|---|---|\n" + "".join(
        f"| {e.index} | {e.kind.value} | {e.value:.6g} | {e.detail} |\n" for e in events
    )
    csv_text = "index,kind,value,detail,monitor\n" + "".join(
        f"{e.index},{e.kind.value},{e.value!r},\"{e.detail}\",{e.monitor}\n" for e in events
    )
    _emit(args, rows, text=md, csv_text=csv_text)
    log.info("%d events, %d written to event log", len(events), written)
    return EXIT_OK


# -- shift --------------------------------------------------------------------


def cmd_shift(args) -> int:
    src = core.load_log(args.source)
    tgt = core.load_log(args.target)
    if args.task == "label_shift":
        payload = report.label_shift_task(src, tgt, args.ridge)
    elif args.task == "label_test":
        payload = report.label_test_task(src, tgt)
    elif args.task == "importance":
        w = shift.importance_weights(core.features_matrix(src), core.features_matrix(tgt), args.seed)
        payload = {"ids": [r.id for r in src], "weights": w.tolist()}
    else:
        scores = shift.ood_knn_scores(core.features_matrix(src), core.features_matrix(tgt), args.k)
        payload = {"ids": [r.id for r in tgt], "scores": scores.tolist(), "k": args.k}
    payload = {"task": args.task, **payload}
    _emit(args, payload)
    return EXIT_OK


# -- simulate -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = synth.GeneratorSpec.from_dict(_load_mapping(args.generator))
    target = spec
    if args.shift:
        target = synth.apply_shift(spec, synth.ShiftSpec.from_dict(_load_mapping(args.shift)))
    seed_train, seed_eval = (int(s.generate_state(1, np.uint64)[0])
                             for s in np.random.SeedSequence(args.seed).spawn(2))
    if not args.output:
        raise CliError("simulate needs --output")
    eval_records = synth.generate(target, args.n, seed_eval, id_prefix="e")
    if args.features_only:
        core.write_log(args.output, eval_records, "labeled")
        return EXIT_OK
    train = synth.generate(spec, args.train_n, seed_train, id_prefix="t")
    model = synth.train_linear(train, args.epochs, args.lr, args.seed, n_classes=spec.n_classes)
    out = []
    for r in eval_records:
        p = synth.predict(model, r.features)
        out.append(core.PredictionRecord(r.id, r.index, core.ClassPrediction(p.argmax(), p),
                                         r.truth, r.features, r.tags))
    core.write_log(args.output, out, "classification")
    if args.model_out:
        with open(args.model_out, "w", encoding="utf-8") as fh:
            json.dump(model.to_dict(), fh, sort_keys=True)
    return EXIT_OK


# -- advtest ------------------------------------------------------------------


def cmd_advtest(args) -> int:
    if args.log:
        records = core.load_log(args.log)
    elif args.generator:
        spec = synth.GeneratorSpec.from_dict(_load_mapping(args.generator))
        records = synth.generate(spec, args.n, args.seed)
    else:
        raise CliError("advtest needs --log or --generator")
    cls = adversarial.parse_perturbation(args.perturbation)
    if args.model:
        model = adversarial.LinearModelAdapter(report.load_linear_model(args.model))
        est = adversarial.adversarial_risk_estimate(model, records, args.loss, cls, args.budget, args.seed)
    elif args.model_cmd:
        with adversarial.ProcessModel(args.model_cmd) as model:
            est = adversarial.adversarial_risk_estimate(model, records, args.loss, cls, args.budget, args.seed)
    else:
        raise CliError("advtest needs --model or --model-cmd")
    payload = {"perturbation": args.perturbation, "loss": args.loss, **est.to_dict()}
    md = (f"adversarial risk lower bound ({args.perturbation}, {args.loss}): {est.value:.6g} "
          f"(clean {est.clean_risk:.6g}, n={est.n})\n")
    _emit(args, payload, text=md)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (unsigned 64-bit)")
    common.add_argument("--format", choices=["jsonlines", "csv", "markdown"], default="jsonlines")
    common.add_argument("--output", help="output file (directory for evaluate)")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="reliakit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("evaluate", parents=[common], help="run a suite config")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="re-render a report.json")
    s.add_argument("report")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("calibrate", parents=[common], help="ECE and temperature scaling")
    s.add_argument("log")
    s.add_argument("--method", choices=["temperature", "ece"], default="temperature")
    s.add_argument("--bins", type=int, default=15)
    s.add_argument("--scheme", choices=["equal_width", "equal_mass"], default="equal_width")
    s.add_argument("--write-log", help="write the temperature-scaled log here")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("monitor", parents=[common], help="replay a log through a monitor")
    s.add_argument("log")
    s.add_argument("--spec", help="monitor definition file (YAML/JSON)")
    s.add_argument("--metric")
    s.add_argument("--rule", choices=["threshold", "consecutive", "zscore", "page_hinkley"])
    s.add_argument("--theta", type=float)
    s.add_argument("--m", type=int)
    s.add_argument("--z", type=float)
    s.add_argument("--direction", choices=["below", "above"])
    s.add_argument("--delta", type=float)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--nominal", type=int, help="leading records forming the nominal window")
    s.add_argument("--event-log", help="append events to this file")
    s.set_defaults(func=cmd_monitor)

    s = sub.add_parser("shift", parents=[common], help="shift estimation and OOD scoring")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--task", choices=["label_shift", "label_test", "importance", "ood_knn"], default="label_shift")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--ridge", action="store_true")
    s.set_defaults(func=cmd_shift)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic prediction log")
    s.add_argument("--generator", required=True)
    s.add_argument("--shift")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--train-n", type=int, default=1000)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--model-out")
    s.add_argument("--features-only", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("advtest", parents=[common], help="black-box adversarial risk")
    s.add_argument("--log")
    s.add_argument("--generator")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--model", help="linear model JSON file")
    s.add_argument("--model-cmd", help="external model process command")
    s.add_argument("--perturbation", required=True, help="linf:EPS or sparse:K:MAG")
    s.add_argument("--loss", default="zero_one_error")
    s.add_argument("--budget", type=int)
    s.set_defaults(func=cmd_advtest)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="reliakit: %(levelname)s: %(message)s")
    if args.command != "evaluate":
        args.seed = 0 if args.seed is None else args.seed
    try:
        if args.seed is not None:
            core.check_seed(args.seed)
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"reliakit: config error: {problem}", file=sys.stderr)
        return EXIT_ERROR
    except (ReliakitError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"reliakit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
