"""Test cases (metric x slice x aggregator x optional threshold) and suites.

A case without a threshold is an optimizing test and only reports a score.
A case with a threshold is a satisficing test and yields Pass or Fail. A suite
is deployable when all of its satisficing tests pass.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import core
from .core import DatasetSlice, PredictionRecord
from .errors import EmptySliceError, ReliakitError, TestCaseError, ValidationError
from .losses import FailureThreshold, get_metric, is_failure


class Aggregator(str, enum.Enum):
    MEAN = "mean"
    MAX = "max"
    COUNT_FAILURES = "count_failures"
    ANY_FAILURE = "any_failure"


class Mode(str, enum.Enum):
    AGGREGATE = "aggregate"
    PER_INSTANCE = "per_instance"


class Direction(str, enum.Enum):
    GREATER_IS_FAILURE = "greater"
    LESS_IS_FAILURE = "less"

    def fails(self, value: float, bound: float) -> bool:
        if self is Direction.GREATER_IS_FAILURE:
            return is_failure(value, bound)
        return value < bound


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    SCORE_ONLY = "score_only"


_AGGREGATE_ONLY = {Aggregator.MEAN, Aggregator.MAX}


@dataclass(frozen=True)
class TestCase:
    __test__ = False

    name: str
    metric: str
    slice: DatasetSlice = field(default_factory=DatasetSlice.all)
    aggregator: Aggregator = Aggregator.MEAN
    threshold: FailureThreshold | None = None
    direction: Direction = Direction.GREATER_IS_FAILURE
    mode: Mode = Mode.AGGREGATE
    max_failures: int = 0
    params: Mapping[str, Any] = field(default_factory=dict, compare=False)
    dataset: str | None = None

    def __post_init__(self):
        for attr, enum_cls in (("aggregator", Aggregator), ("direction", Direction), ("mode", Mode)):
            object.__setattr__(self, attr, enum_cls(getattr(self, attr)))
        if isinstance(self.threshold, (int, float)):
            object.__setattr__(self, "threshold", FailureThreshold(float(self.threshold)))
        if self.mode is Mode.PER_INSTANCE:
            if self.threshold is None:
                raise ValidationError(f"{self.name}: per-instance failure mode needs a threshold")
            if self.aggregator in _AGGREGATE_ONLY:
                raise ValidationError(f"{self.name}: {self.aggregator.value} is an aggregate-mode aggregator")
        elif self.aggregator not in _AGGREGATE_ONLY:
            raise ValidationError(f"{self.name}: {self.aggregator.value} needs per-instance failure mode")
        if self.max_failures < 0:
            raise ValidationError(f"{self.name}: max_failures must be non-negative")

    @property
    def satisficing(self) -> bool:
        return self.threshold is not None


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    case: str
    score: float
    n: int
    verdict: Verdict
    satisficing: bool = False
    metric: str = ""

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "metric": self.metric,
            "score": self.score,
            "n": self.n,
            "verdict": self.verdict.value,
            "satisficing": self.satisficing,
        }


@dataclass(frozen=True)
class SuiteReport:
    outcomes: tuple[TestOutcome, ...]
    deployable: bool
    warnings: tuple[str, ...] = ()

    def outcome(self, name: str) -> TestOutcome:
        for o in self.outcomes:
            if o.case == name:
                return o
        raise KeyError(f"no outcome for test case {name!r}")

    def to_dict(self) -> dict:
        return {
            "deployable": self.deployable,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "warnings": list(self.warnings),
        }


def _aggregate(agg: Aggregator, errors: Sequence[float]) -> float:
    if agg is Aggregator.MEAN:
        return math.fsum(errors) / len(errors)
    return max(errors)


def run_test_case(case: TestCase, dataset: Sequence[PredictionRecord]) -> TestOutcome:
    records = core.slice(dataset, case.slice)
    if not records:
        raise EmptySliceError(f"test case {case.name!r}: slice {case.slice.name!r} selects no records")
    metric = get_metric(case.metric)

    if not metric.per_instance:
        if case.mode is not Mode.AGGREGATE:
            raise ValidationError(f"{case.name}: dataset metric {metric.name!r} needs aggregate mode")
        score = float(metric(records, **case.params))
        return _verdict(case, score, len(records))

    errors = [float(metric(r)) for r in records]
    if case.mode is Mode.AGGREGATE:
        return _verdict(case, _aggregate(case.aggregator, errors), len(records))

    bound = case.threshold.delta
    count = sum(case.direction.fails(e, bound) for e in errors)
    if case.aggregator is Aggregator.ANY_FAILURE:
        score = 1.0 if count > 0 else 0.0
        failed = count > 0
    else:
        score = float(count)
        failed = count > case.max_failures
    return TestOutcome(case.name, score, len(records), Verdict.FAIL if failed else Verdict.PASS, True, case.metric)


def _verdict(case: TestCase, score: float, n: int) -> TestOutcome:
    if case.threshold is None:
        return TestOutcome(case.name, score, n, Verdict.SCORE_ONLY, False, case.metric)
    failed = case.direction.fails(score, case.threshold.delta)
    return TestOutcome(case.name, score, n, Verdict.FAIL if failed else Verdict.PASS, True, case.metric)


def _run_annotated(case: TestCase, dataset) -> TestOutcome:
    try:
        return run_test_case(case, dataset)
    except ReliakitError as exc:
        if isinstance(exc, TestCaseError):
            raise
        raise TestCaseError(case.name, exc) from exc
    except (KeyError, ValueError) as exc:
        raise TestCaseError(case.name, exc) from exc


def run_suite(
    suite: Sequence[TestCase],
    dataset: Sequence[PredictionRecord] | Mapping[str, Sequence[PredictionRecord]],
    workers: int = 1,
) -> SuiteReport:
    """Run every case; outcomes keep suite order regardless of ``workers``.

    ``dataset`` may be a mapping from dataset name to records, in which case
    each case reads the dataset named by its ``dataset`` field.
    """

    def data_for(case: TestCase):
        if isinstance(dataset, Mapping):
            if case.dataset not in dataset:
                raise TestCaseError(case.name, KeyError(f"unknown dataset {case.dataset!r}"))
            return dataset[case.dataset]
        return dataset

    if workers > 1 and len(suite) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_annotated, c, data_for(c)) for c in suite]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_annotated(c, data_for(c)) for c in suite]
    warnings = ("empty suite: deployable is vacuously true",) if not suite else ()
    deployable = all(o.verdict is not Verdict.FAIL for o in outcomes if o.satisficing)
    return SuiteReport(tuple(outcomes), deployable, warnings)


class Ordering(str, enum.Enum):
    A = "a"
    B = "b"
    TIE = "tie"


def compare_models(
    a: SuiteReport,
    b: SuiteReport,
    optimizing_case: str,
    direction: Direction | str = Direction.GREATER_IS_FAILURE,
) -> Ordering:
    """Prefer the deployable model; otherwise the better optimizing score.

    Equal scores give ``Ordering.TIE``; ties are never broken here.
    """
    score_a = a.outcome(optimizing_case).score
    score_b = b.outcome(optimizing_case).score
    if a.deployable != b.deployable:
        return Ordering.A if a.deployable else Ordering.B
    if score_a == score_b or (np.isnan(score_a) and np.isnan(score_b)):
        return Ordering.TIE
    lower_wins = Direction(direction) is Direction.GREATER_IS_FAILURE
    a_better = score_a < score_b if lower_wins else score_a > score_b
    return Ordering.A if a_better else Ordering.B
