"""Suite configuration: loading, schema validation, name resolution, hashing.

A config is a YAML (or JSON) mapping. Relative dataset and model paths are
resolved against the config file's directory. The config hash is the SHA-256
of the parsed config serialized as canonical JSON (sorted keys, no
whitespace, UTF-8).
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

import jsonschema
import yaml

from .core import KINDS, DatasetSlice
from .errors import ConfigError
from .losses import get_metric
from .testcase import Aggregator, Direction, Mode, TestCase

_NAMED = {"type": "string", "minLength": 1}
_NUM = {"type": "number"}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["datasets"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": {"type": "integer", "minimum": 1},
        "datasets": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["path"],
                "properties": {"path": {"type": "string"}, "kind": {"enum": list(KINDS)}},
            },
        },
        "slices": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name"],
                "properties": {
                    "name": _NAMED,
                    "tags_any": {"type": "array", "items": {"type": "string"}},
                    "tags_all": {"type": "array", "items": {"type": "string"}},
                    "exclude_tags": {"type": "array", "items": {"type": "string"}},
                    "ids": {"type": "array", "items": {"type": ["string", "integer"]}},
                    "index_range": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                },
            },
        },
        "tests": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "dataset", "metric"],
                "properties": {
                    "name": _NAMED,
                    "dataset": _NAMED,
                    "metric": _NAMED,
                    "slice": _NAMED,
                    "aggregator": {"enum": [a.value for a in Aggregator]},
                    "mode": {"enum": [m.value for m in Mode]},
                    "threshold": _NUM,
                    "direction": {"enum": [d.value for d in Direction]},
                    "max_failures": {"type": "integer", "minimum": 0},
                    "params": {"type": "object"},
                },
            },
        },
        "gates": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "dataset", "metric", "bound"],
                "properties": {
                    "name": _NAMED,
                    "dataset": _NAMED,
                    "slice": _NAMED,
                    "metric": {"type": "string", "pattern": "^(?i:ap|ar)@[0-9.]+$"},
                    "bound": _NUM,
                    "classes": {"type": "array", "items": {"type": ["string", "integer"]}},
                },
            },
        },
        "monitors": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "dataset", "metric", "rule"],
                "properties": {
                    "name": _NAMED,
                    "dataset": _NAMED,
                    "metric": _NAMED,
                    "rule": {"enum": ["threshold", "consecutive", "zscore", "page_hinkley"]},
                    "theta": _NUM,
                    "direction": {"enum": ["below", "above"]},
                    "m": {"type": "integer", "minimum": 1},
                    "z": _NUM,
                    "nominal": {"type": "integer", "minimum": 2},
                    "delta": {"type": "number", "minimum": 0},
                    "lambda": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "calibration": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "dataset"],
                "properties": {
                    "name": _NAMED,
                    "dataset": _NAMED,
                    "slice": _NAMED,
                    "n_bins": {"type": "integer", "minimum": 1},
                    "scheme": {"enum": ["equal_width", "equal_mass"]},
                    "temperature": {"type": "boolean"},
                },
            },
        },
        "shift": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "kind", "source", "target"],
                "properties": {
                    "name": _NAMED,
                    "kind": {"enum": ["label_shift", "label_test", "importance", "ood_knn"]},
                    "source": _NAMED,
                    "target": _NAMED,
                    "k": {"type": "integer", "minimum": 1},
                    "ridge": {"type": "boolean"},
                },
            },
        },
        "adversarial": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "dataset", "model", "perturbation", "loss"],
                "properties": {
                    "name": _NAMED,
                    "dataset": _NAMED,
                    "model": {"type": "string"},
                    "perturbation": {
                        "type": "object",
                        "required": ["kind"],
                        "properties": {
                            "kind": {"enum": ["linf", "sparse"]},
                            "epsilon": {"type": "number", "minimum": 0},
                            "k": {"type": "integer", "minimum": 1},
                            "magnitude": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                    "loss": _NAMED,
                    "budget": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}


@dataclass
class SuiteConfig:
    raw: dict
    base_dir: str
    seed: int = 0
    workers: int = 1
    datasets: dict[str, dict] = field(default_factory=dict)
    slices: dict[str, DatasetSlice] = field(default_factory=dict)
    tests: list[TestCase] = field(default_factory=list)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def section(self, name: str) -> list[dict]:
        return list(self.raw.get(name, []))

    def path(self, rel: str) -> str:
        return rel if os.path.isabs(rel) else os.path.normpath(os.path.join(self.base_dir, rel))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode("utf-8")).hexdigest()


def _path_str(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/".join(parts) if parts else "<root>"


def parse_config(raw: Any, base_dir: str = ".") -> SuiteConfig:
    """Validate ``raw`` fully and report every problem at once."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    problems = [f"{_path_str(e)}: {e.message}" for e in sorted(validator.iter_errors(raw), key=str)]
    if problems:
        raise ConfigError(problems)

    cfg = SuiteConfig(raw=raw, base_dir=base_dir, seed=raw.get("seed", 0), workers=raw.get("workers", 1))
    cfg.datasets = {name: dict(d) for name, d in raw["datasets"].items()}
    slices = {"all": DatasetSlice.all()}
    for s in raw.get("slices", []):
        if s["name"] in slices and s["name"] != "all":
            problems.append(f"slices: duplicate slice {s['name']!r}")
        slices[s["name"]] = DatasetSlice.from_dict(s)
    cfg.slices = slices

    def need_dataset(section: str, item: dict, key: str = "dataset"):
        if item[key] not in cfg.datasets:
            problems.append(f"{section}/{item['name']}: unknown dataset {item[key]!r}")

    def need_slice(section: str, item: dict):
        if item.get("slice", "all") not in slices:
            problems.append(f"{section}/{item['name']}: unknown slice {item['slice']!r}")

    def need_metric(section: str, item: dict, per_instance: bool | None = None):
        try:
            metric = get_metric(item["metric"])
        except KeyError:
            problems.append(f"{section}/{item['name']}: unknown metric {item['metric']!r}")
            return
        if per_instance and not metric.per_instance:
            problems.append(f"{section}/{item['name']}: metric {item['metric']!r} is not an instance metric")

    seen: set[tuple[str, str]] = set()
    for section in ("tests", "gates", "monitors", "calibration", "shift", "adversarial"):
        for item in raw.get(section, []):
            key = ("case" if section in ("tests", "gates") else section, item["name"])
            if key in seen:
                problems.append(f"{section}/{item['name']}: duplicate name")
            seen.add(key)

    for t in raw.get("tests", []):
        need_dataset("tests", t)
        need_slice("tests", t)
        need_metric("tests", t)
    for g in raw.get("gates", []):
        need_dataset("gates", g)
        need_slice("gates", g)
    for m in raw.get("monitors", []):
        need_dataset("monitors", m)
        need_metric("monitors", m, per_instance=True)
        required = {"threshold": ["theta"], "consecutive": ["theta", "m"], "zscore": ["z", "nominal"],
                    "page_hinkley": ["lambda"]}[m["rule"]]
        for key in required:
            if key not in m:
                problems.append(f"monitors/{m['name']}: rule {m['rule']!r} needs {key!r}")
    for c in raw.get("calibration", []):
        need_dataset("calibration", c)
        need_slice("calibration", c)
    for s in raw.get("shift", []):
        need_dataset("shift", s, "source")
        need_dataset("shift", s, "target")
    for a in raw.get("adversarial", []):
        need_dataset("adversarial", a)
        p = a["perturbation"]
        if p["kind"] == "linf" and "epsilon" not in p:
            problems.append(f"adversarial/{a['name']}: linf perturbation needs 'epsilon'")
        if p["kind"] == "sparse" and not {"k", "magnitude"} <= set(p):
            problems.append(f"adversarial/{a['name']}: sparse perturbation needs 'k' and 'magnitude'")

    if not problems:
        try:
            cfg.tests = _build_tests(raw, slices)
        except (ValueError, KeyError) as exc:
            problems.append(f"tests: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def _build_tests(raw: dict, slices: dict[str, DatasetSlice]) -> list[TestCase]:
    cases = []
    for t in raw.get("tests", []):
        cases.append(
            TestCase(
                name=t["name"],
                metric=t["metric"],
                slice=slices[t.get("slice", "all")],
                aggregator=t.get("aggregator", "mean"),
                threshold=t.get("threshold"),
                direction=t.get("direction", "greater"),
                mode=t.get("mode", "aggregate"),
                max_failures=t.get("max_failures", 0),
                params=t.get("params", {}),
                dataset=t["dataset"],
            )
        )
    for g in raw.get("gates", []):
        params = {"classes": g["classes"]} if "classes" in g else {}
        cases.append(
            TestCase(
                name=g["name"],
                metric=g["metric"],
                slice=slices[g.get("slice", "all")],
                threshold=float(g["bound"]),
                direction=Direction.LESS_IS_FAILURE,
                params=params,
                dataset=g["dataset"],
            )
        )
    return cases


def load_config(path: str | os.PathLike) -> SuiteConfig:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    return parse_config(raw, os.path.dirname(os.path.abspath(path)))
