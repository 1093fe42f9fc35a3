"""Streaming monitors over self-assessment metric streams.

Every monitor is a stateful accumulator: ``update(index, value)`` consumes one
element and returns the events it raised; ``feed(stream)`` consumes a chunk.
Feeding a stream in several chunks yields the same events as one pass.
"""
from __future__ import annotations

import enum
import json
import math
import os
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ValidationError


class EventKind(str, enum.Enum):
    THRESHOLD_BREACH = "ThresholdBreach"
    CONSECUTIVE_RULE = "ConsecutiveRule"
    ANOMALY = "Anomaly"
    CHANGE_POINT = "ChangePoint"


@dataclass(frozen=True)
class MonitorEvent:
    index: int
    kind: EventKind
    value: float
    detail: str = ""
    monitor: str = ""

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "kind": EventKind(self.kind).value,
            "value": self.value,
            "detail": self.detail,
            "monitor": self.monitor,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MonitorEvent":
        return cls(int(raw["index"]), EventKind(raw["kind"]), float(raw["value"]),
                   raw.get("detail", ""), raw.get("monitor", ""))


Stream = Sequence[tuple[int, float]]


def as_stream(values: Iterable[float], start: int = 0) -> list[tuple[int, float]]:
    return [(start + i, float(v)) for i, v in enumerate(values)]


def _check_order(last: int | None, index: int) -> None:
    if last is not None and index <= last:
        raise ValidationError(f"stream indices must strictly increase ({index} after {last})")


class _Monitor:
    name = ""

    def __init__(self):
        self._last: int | None = None

    def _step(self, index: int, value: float) -> list[MonitorEvent]:
        raise NotImplementedError

    def update(self, index: int, value: float) -> list[MonitorEvent]:
        _check_order(self._last, index)
        self._last = index
        return self._step(index, float(value))

    def feed(self, stream: Stream) -> list[MonitorEvent]:
        events: list[MonitorEvent] = []
        for index, value in stream:
            events.extend(self.update(index, value))
        return events


class ThresholdMonitor(_Monitor):
    """One event per value strictly beyond ``theta`` in ``direction``."""

    def __init__(self, theta: float, direction: str = "below", name: str = "threshold"):
        super().__init__()
        if direction not in ("below", "above"):
            raise ValidationError(f"direction must be 'below' or 'above', got {direction!r}")
        self.theta = theta
        self.direction = direction
        self.name = name

    def _step(self, index, value):
        beyond = value < self.theta if self.direction == "below" else value > self.theta
        if beyond:
            return [MonitorEvent(index, EventKind.THRESHOLD_BREACH, value,
                                 f"{self.direction} {self.theta}", self.name)]
        return []


class ConsecutiveRuleMonitor(_Monitor):
    """Fires on the m-th consecutive value strictly below ``theta``.

    After firing the run counter restarts, so a further alarm needs another
    ``m`` consecutive sub-threshold values.
    """

    def __init__(self, theta: float, m: int, name: str = "consecutive"):
        super().__init__()
        if m < 1:
            raise ValidationError("m must be >= 1")
        self.theta = theta
        self.m = m
        self.run = 0
        self.name = name

    def _step(self, index, value):
        if value < self.theta:
            self.run += 1
            if self.run == self.m:
                self.run = 0
                return [MonitorEvent(index, EventKind.CONSECUTIVE_RULE, value,
                                     f"{self.m} consecutive below {self.theta}", self.name)]
        else:
            self.run = 0
        return []


@dataclass(frozen=True)
class NominalProfile:
    mean: float
    stddev: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError("a nominal profile needs at least 2 values")
        if not (math.isfinite(self.mean) and math.isfinite(self.stddev)) or self.stddev <= 0:
            raise ValidationError("nominal profile needs finite mean and positive stddev")


def build_profile(nominal: Stream | Sequence[float]) -> NominalProfile:
    values = np.array([v[1] if isinstance(v, tuple) else v for v in nominal], dtype=np.float64)
    if values.size < 2:
        raise ValidationError("a nominal profile needs at least 2 values")
    sd = float(values.std(ddof=1))
    if sd == 0.0:
        raise ValidationError("nominal window has zero variance")
    return NominalProfile(float(values.mean()), sd, int(values.size))


class ZScoreMonitor(_Monitor):
    def __init__(self, profile: NominalProfile, z: float, name: str = "zscore"):
        super().__init__()
        self.profile = profile
        self.z = z
        self.name = name

    def _step(self, index, value):
        score = abs(value - self.profile.mean) / self.profile.stddev
        if score > self.z:
            return [MonitorEvent(index, EventKind.ANOMALY, value, f"|z|={score:.4g} > {self.z}", self.name)]
        return []


class PageHinkleyMonitor(_Monitor):
    """Page-Hinkley test for an increase in the stream mean.

    Keeps ``m_t = sum_i (x_i - xbar_i - delta)`` with the running mean
    ``xbar_i`` and alarms once, at the first ``t`` with
    ``m_t - min_{s<=t} m_s > lam``. Negate the stream to detect decreases.
    """

    def __init__(self, delta: float, lam: float, name: str = "page_hinkley"):
        super().__init__()
        if delta < 0:
            raise ValidationError("delta must be >= 0")
        if not lam > 0:
            raise ValidationError("lambda must be > 0")
        self.delta = float(delta)
        self.lam = float(lam)
        self.name = name
        self.n = 0
        self.mean = 0.0
        self.cum = 0.0
        self.cum_min = math.inf
        self.alarm: int | None = None

    def _step(self, index, value):
        return self._scan([index], np.array([value]))

    def _scan(self, indices, values) -> list[MonitorEvent]:
        if self.alarm is not None or math.isinf(self.lam):
            return []
        pos, self.n, self.mean, self.cum, self.cum_min = kernels.page_hinkley_scan(
            values, self.delta, self.lam, self.n, self.mean, self.cum, self.cum_min
        )
        if pos < 0:
            return []
        self.alarm = indices[pos]
        stat = self.cum - self.cum_min
        return [MonitorEvent(self.alarm, EventKind.CHANGE_POINT, float(values[pos]),
                             f"PH={stat:.4g} > {self.lam}", self.name)]

    def feed(self, stream: Stream) -> list[MonitorEvent]:
        if not len(stream):
            return []
        indices = [int(i) for i, _ in stream]
        for i in indices:
            _check_order(self._last, i)
            self._last = i
        values = np.array([v for _, v in stream], dtype=np.float64)
        return self._scan(indices, values)


# -- batch conveniences -------------------------------------------------------


def threshold_monitor(stream: Stream, theta: float, direction: str = "below") -> list[MonitorEvent]:
    return ThresholdMonitor(theta, direction).feed(stream)


def consecutive_rule(stream: Stream, theta: float, m: int) -> int | None:
    """Index of the m-th consecutive value strictly below ``theta``, or None."""
    events = ConsecutiveRuleMonitor(theta, m).feed(stream)
    return events[0].index if events else None


def zscore_monitor(profile: NominalProfile, stream: Stream, z: float) -> list[MonitorEvent]:
    return ZScoreMonitor(profile, z).feed(stream)


def page_hinkley(stream: Stream, delta: float, lam: float) -> int | None:
    events = PageHinkleyMonitor(delta, lam).feed(stream)
    return events[0].index if events else None


# -- event log ----------------------------------------------------------------

_log_lock = threading.Lock()


def append_event_log(path: str | os.PathLike, events: Sequence[MonitorEvent]) -> int:
    """Append events in index order, one JSON object per line."""
    if not events:
        return 0
    ordered = sorted(events, key=lambda e: e.index)
    lines = "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in ordered)
    with _log_lock, open(path, "a", encoding="utf-8") as fh:
        fh.write(lines)
    return len(ordered)


def load_event_log(path: str | os.PathLike) -> list[MonitorEvent]:
    with open(path, encoding="utf-8") as fh:
        return [MonitorEvent.from_dict(json.loads(line)) for line in fh if line.strip()]


def make_monitor(spec: dict, profile_values: Sequence[float] | None = None) -> _Monitor:
    """Build a monitor from a config mapping with a ``rule`` key."""
    rule = spec.get("rule")
    name = spec.get("name", rule or "")
    if rule == "threshold":
        return ThresholdMonitor(float(spec["theta"]), spec.get("direction", "below"), name)
    if rule == "consecutive":
        return ConsecutiveRuleMonitor(float(spec["theta"]), int(spec["m"]), name)
    if rule == "zscore":
        if profile_values is None:
            raise ValidationError("zscore monitor needs a nominal window")
        return ZScoreMonitor(build_profile(profile_values), float(spec["z"]), name)
    if rule == "page_hinkley":
        lam = spec.get("lambda", spec.get("lam"))
        return PageHinkleyMonitor(float(spec.get("delta", 0.0)), float(lam), name)
    raise ValidationError(f"unknown monitor rule {rule!r}")
