"""Pointwise error functions, the failure predicate and the metric registry."""
from __future__ import annotations

import importlib
import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import (
    ClassProbVector,
    GaussianPrediction,
    PredictionRecord,
    clamp_probs,
    class_probs,
    predicted_label,
    require_truth,
)
from .errors import ValidationError


@dataclass(frozen=True)
class FailureThreshold:
    delta: float

    def __post_init__(self):
        if not math.isfinite(self.delta):
            raise ValidationError("failure threshold must be finite")


def _finite(*xs: float) -> None:
    for x in xs:
        if not math.isfinite(x):
            raise ValidationError(f"non-finite input {x!r}")


def squared_error(pred: float, label: float) -> float:
    _finite(pred, label)
    return (pred - label) ** 2


def absolute_error(pred: float, label: float) -> float:
    _finite(pred, label)
    return abs(pred - label)


def zero_one_error(pred_class, true_class) -> float:
    return 0.0 if pred_class == true_class else 1.0


def is_failure(err: float, threshold: FailureThreshold | float) -> bool:
    """True iff the error strictly exceeds the threshold."""
    delta = threshold.delta if isinstance(threshold, FailureThreshold) else float(threshold)
    return err > delta


def negative_log_likelihood(prob: ClassProbVector, true_class: int) -> float:
    if not 0 <= true_class < len(prob):
        raise ValidationError(f"class {true_class} out of range for {len(prob)} classes")
    return -math.log(float(clamp_probs(prob.probs[true_class])))


# -- registry -----------------------------------------------------------------


@dataclass(frozen=True)
class Metric:
    """A named metric usable from suite configurations.

    Instance metrics map one record to a real; dataset metrics map a whole
    slice to one score and ignore the aggregator.
    """

    name: str
    fn: Callable
    needs_truth: bool = True
    per_instance: bool = True
    kinds: tuple[str, ...] = ()

    def __call__(self, arg, **params):
        return self.fn(arg, **params)


_METRICS: dict[str, Metric] = {}
_PATTERNS: list[tuple[re.Pattern, Callable[[re.Match], Metric]]] = []
_BUILTIN_MODULES = ("uncertainty", "calibration", "detect_eval", "shift")
_loaded = False


def register_metric(name: str, *, needs_truth: bool = True, per_instance: bool = True, kinds=()):
    def deco(fn):
        _METRICS[name] = Metric(name, fn, needs_truth, per_instance, tuple(kinds))
        return fn

    return deco


def register_pattern(pattern: str, factory: Callable[[re.Match], Metric]) -> None:
    _PATTERNS.append((re.compile(pattern, re.IGNORECASE), factory))


def _load_builtins() -> None:
    global _loaded
    if not _loaded:
        _loaded = True
        for mod in _BUILTIN_MODULES:
            importlib.import_module(f"{__package__}.{mod}")


def get_metric(name: str) -> Metric:
    _load_builtins()
    if name in _METRICS:
        return _METRICS[name]
    for pattern, factory in _PATTERNS:
        m = pattern.fullmatch(name)
        if m:
            return factory(m)
    raise KeyError(f"unknown metric {name!r}")


def metric_names() -> list[str]:
    _load_builtins()
    return sorted(_METRICS)


def _regression_pred(r: PredictionRecord) -> float:
    if isinstance(r.payload, GaussianPrediction):
        return r.payload.mean
    raise ValidationError(f"record {r.id!r} ({r.kind}) carries no regression prediction")


@register_metric("squared_error", kinds=("gaussian",))
def _m_squared(r: PredictionRecord) -> float:
    return squared_error(_regression_pred(r), float(require_truth(r)))


@register_metric("absolute_error", kinds=("gaussian",))
def _m_absolute(r: PredictionRecord) -> float:
    return absolute_error(_regression_pred(r), float(require_truth(r)))


@register_metric("zero_one_error", kinds=("classification", "ensemble"))
def _m_zero_one(r: PredictionRecord) -> float:
    return zero_one_error(predicted_label(r), require_truth(r))


@register_metric("negative_log_likelihood", kinds=("classification", "ensemble"))
def _m_nll(r: PredictionRecord) -> float:
    return negative_log_likelihood(class_probs(r), require_truth(r))


_METRICS["nll"] = _METRICS["negative_log_likelihood"]


def instance_errors(metric: Metric | str, records: Sequence[PredictionRecord]) -> list[float]:
    if isinstance(metric, str):
        metric = get_metric(metric)
    if not metric.per_instance:
        raise ValidationError(f"metric {metric.name!r} is not an instance metric")
    return [float(metric(r)) for r in records]
