"""Calibration diagnostics and post-hoc correction.

Classifiers: expected calibration error with reliability bins, temperature
scaling and split conformal prediction sets. Gaussian regressors: central
interval coverage, its calibration error across levels, and sharpness.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ClassProbVector,
    GaussianPrediction,
    PredictionRecord,
    clamp_probs,
    class_probs,
    require_truth,
)
from .errors import DegenerateObjectiveError, ValidationError
from .losses import register_metric

TEMPERATURE_BOUNDS = (0.05, 20.0)


# -- inverse error function ---------------------------------------------------

_SQRT_PI_2 = 2.0 / math.sqrt(math.pi)


def _erfinv_initial(y: float) -> float:
    # Giles (2012) single-precision polynomial approximation.
    w = -math.log((1.0 - y) * (1.0 + y))
    if w < 5.0:
        w -= 2.5
        p = 2.81022636e-08
        p = 3.43273939e-07 + p * w
        p = -3.5233877e-06 + p * w
        p = -4.39150654e-06 + p * w
        p = 0.00021858087 + p * w
        p = -0.00125372503 + p * w
        p = -0.00417768164 + p * w
        p = 0.246640727 + p * w
        p = 1.50140941 + p * w
    else:
        w = math.sqrt(w) - 3.0
        p = -0.000200214257
        p = 0.000100950558 + p * w
        p = 0.00134934322 + p * w
        p = -0.00367342844 + p * w
        p = 0.00573950773 + p * w
        p = -0.0076224613 + p * w
        p = 0.00943887047 + p * w
        p = 1.00167406 + p * w
        p = 2.83297682 + p * w
    return p * y


def erfinv(y: float) -> float:
    """Inverse of the Gauss error function on (-1, 1).

    Polynomial start, then Newton refinement. Above 0.5 the refinement works
    on ``log erfc`` so that arguments within 1e-16 of 1 keep full precision;
    there it may take a few steps instead of one.
    """
    if not -1.0 < y < 1.0:
        if y == 1.0:
            return math.inf
        if y == -1.0:
            return -math.inf
        raise ValidationError(f"erfinv argument {y} outside [-1, 1]")
    if y < 0:
        return -erfinv(-y)
    x = _erfinv_initial(y)
    if y <= 0.5:
        return x - (math.erf(x) - y) / (_SQRT_PI_2 * math.exp(-x * x))
    log_q = math.log1p(-y)
    for _ in range(20):
        c = math.erfc(x)
        step = (math.log(c) - log_q) * c / (_SQRT_PI_2 * math.exp(-x * x))
        x += step
        if abs(step) < 1e-15 * x:
            break
    return x


def interval_halfwidth(p: float) -> float:
    """Standard-normal multiplier of the central interval at confidence ``p``."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"confidence level {p} outside (0, 1)")
    return math.sqrt(2.0) * erfinv(p)


# -- ECE ----------------------------------------------------------------------


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    mean_confidence: float
    accuracy: float
    count: int


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    bins: tuple[ReliabilityBin, ...]
    n: int
    scheme: str

    def to_dict(self) -> dict:
        return {
            "ece": self.ece,
            "n": self.n,
            "scheme": self.scheme,
            "bins": [b.__dict__ for b in self.bins],
        }


def _confidence_and_correct(records: Sequence[PredictionRecord]):
    if not records:
        raise ValidationError("ECE needs at least one record")
    probs = np.array([class_probs(r).probs for r in records], dtype=np.float64)
    truth = np.array([require_truth(r) for r in records])
    pred = probs.argmax(axis=1)
    return probs.max(axis=1), (pred == truth).astype(np.float64), probs.shape[1]


def _edges(conf: np.ndarray, n_bins: int, scheme: str, low: float) -> np.ndarray:
    if scheme == "equal_width":
        return np.linspace(low, 1.0, n_bins + 1)
    if scheme == "equal_mass":
        qs = np.quantile(conf, np.arange(1, n_bins) / n_bins)
        inner = np.unique(qs[(qs > low) & (qs < 1.0)])
        return np.concatenate([[low], inner, [1.0]])
    raise ValidationError(f"unknown binning scheme {scheme!r}")


def ece_from_arrays(
    confidence, correct, n_bins: int = 15, scheme: str = "equal_width", low: float = 0.0
) -> CalibrationReport:
    """ECE over given confidences and 0/1 correctness, binned on ``[low, 1]``."""
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    conf = np.asarray(confidence, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if conf.size == 0:
        raise ValidationError("ECE needs at least one record")
    edges = _edges(conf, n_bins, scheme, low)
    nb = len(edges) - 1
    idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, nb - 1)
    counts = np.bincount(idx, minlength=nb)
    conf_sum = np.bincount(idx, weights=conf, minlength=nb)
    corr_sum = np.bincount(idx, weights=corr, minlength=nb)
    bins = []
    gap = 0.0
    for b in range(nb):
        c = int(counts[b])
        if c:
            mc, acc = conf_sum[b] / c, corr_sum[b] / c
            gap += c * abs(acc - mc)
        else:
            mc = acc = 0.0
        bins.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]), float(mc), float(acc), c))
    return CalibrationReport(float(gap / conf.size), tuple(bins), int(conf.size), scheme)


def ece(
    records: Sequence[PredictionRecord], n_bins: int = 15, scheme: str = "equal_width"
) -> CalibrationReport:
    """Expected calibration error of the top-class probability.

    Bins cover ``[1/K, 1]`` since the top probability of K classes can't be
    lower; empty bins contribute nothing.
    """
    conf, correct, k = _confidence_and_correct(records)
    return ece_from_arrays(conf, correct, n_bins, scheme, low=1.0 / k)


def bins_to_csv(report: CalibrationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lower", "upper", "mean_confidence", "accuracy", "count"])
    for b in report.bins:
        w.writerow([repr(b.lower), repr(b.upper), repr(b.mean_confidence), repr(b.accuracy), b.count])
    return buf.getvalue()


# -- temperature scaling ------------------------------------------------------


@dataclass(frozen=True)
class Temperature:
    t: float

    def __post_init__(self):
        t = float(self.t)
        if not (math.isfinite(t) and t > 0):
            raise ValidationError(f"temperature must be finite and > 0, got {t}")
        object.__setattr__(self, "t", t)

    def __float__(self) -> float:
        return self.t


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def apply_temperature(p: ClassProbVector, t: Temperature | float) -> ClassProbVector:
    t = float(t)
    arr = p.array if isinstance(p, ClassProbVector) else np.asarray(p, dtype=np.float64)
    return ClassProbVector(tuple(_softmax(np.log(clamp_probs(arr)) / t)))


def temperature_nll(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    """Mean negative log-likelihood of ``softmax(logits / t)``."""
    z = logits / t
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = (a + b) / 2.0
    # the optimum may sit on a bound
    return min((x, lo, hi), key=f)


def logits_and_labels(records: Sequence[PredictionRecord]) -> tuple[np.ndarray, np.ndarray]:
    probs = np.array([class_probs(r).probs for r in records], dtype=np.float64)
    labels = np.array([require_truth(r) for r in records], dtype=np.int64)
    return np.log(clamp_probs(probs)), labels


def fit_temperature(
    records: Sequence[PredictionRecord], bounds: tuple[float, float] = TEMPERATURE_BOUNDS
) -> Temperature:
    """Temperature minimizing the mean NLL, by golden-section search on log T."""
    if len(records) < 2:
        raise ValidationError("temperature fitting needs at least 2 records")
    logits, labels = logits_and_labels(records)
    return fit_temperature_logits(logits, labels, bounds)


def fit_temperature_logits(logits, labels, bounds=TEMPERATURE_BOUNDS) -> Temperature:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    spread = logits.max(axis=1) - logits.min(axis=1)
    if np.all(spread < 1e-12):
        raise DegenerateObjectiveError("every probability vector is uniform; the NLL is flat in T")
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    best = _golden_section(lambda u: temperature_nll(logits, labels, math.exp(u)), lo, hi, 1e-8)
    return Temperature(math.exp(best))


# -- regression intervals -----------------------------------------------------


def _gaussian_arrays(records: Sequence[PredictionRecord], need_truth: bool = True):
    if not records:
        raise ValidationError("no records")
    mu, sd, y = [], [], []
    for r in records:
        if not isinstance(r.payload, GaussianPrediction):
            raise ValidationError(f"record {r.id!r} ({r.kind}) is not a gaussian prediction")
        mu.append(r.payload.mean)
        sd.append(r.payload.stddev)
        if need_truth:
            y.append(float(require_truth(r)))
    return np.array(mu), np.array(sd), np.array(y)


def interval_coverage(records: Sequence[PredictionRecord], p: float) -> float:
    """Fraction of truths inside the central ``p`` interval of each Gaussian."""
    mu, sd, y = _gaussian_arrays(records)
    z = interval_halfwidth(p)
    inside = (y >= mu - sd * z) & (y <= mu + sd * z)
    return float(inside.mean())


def regression_calibration_error(records: Sequence[PredictionRecord], levels: Sequence[float]) -> float:
    levels = list(levels)
    if not levels:
        raise ValidationError("at least one confidence level is required")
    if len(set(levels)) != len(levels):
        raise ValidationError("confidence levels must be distinct")
    return float(np.mean([abs(interval_coverage(records, p) - p) for p in levels]))


def sharpness(records: Sequence[PredictionRecord]) -> float:
    """Mean predictive standard deviation, in label units."""
    _, sd, _ = _gaussian_arrays(records, need_truth=False)
    return float(sd.mean())


# -- split conformal ----------------------------------------------------------


@dataclass(frozen=True)
class ConformalCalibration:
    scores: tuple[float, ...]
    alpha: float

    def __post_init__(self):
        if not self.scores:
            raise ValidationError("conformal calibration needs at least one score")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        if any(a > b for a, b in zip(self.scores, self.scores[1:])):
            raise ValidationError("nonconformity scores must be sorted ascending")

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def threshold(self) -> float:
        """The ceil((n+1)(1-alpha))-th smallest score.

        When that rank exceeds n the threshold is the largest possible
        nonconformity (1.0), so every class is admitted.
        """
        rank = math.ceil((self.n + 1) * (1.0 - self.alpha) - 1e-12)
        if rank > self.n:
            return 1.0
        return self.scores[max(rank, 1) - 1]


def conformal_calibrate(records: Sequence[PredictionRecord], alpha: float) -> ConformalCalibration:
    scores = sorted(1.0 - class_probs(r).probs[require_truth(r)] for r in records)
    if not scores:
        raise ValidationError("empty calibration set")
    return ConformalCalibration(tuple(scores), float(alpha))


def conformal_set(cal: ConformalCalibration, p: ClassProbVector) -> set[int]:
    q = cal.threshold
    return {c for c, pc in enumerate(p.probs) if 1.0 - pc <= q}


# -- registry entries ---------------------------------------------------------


@register_metric("ece", per_instance=False, kinds=("classification", "ensemble"))
def _m_ece(records, n_bins: int = 15, scheme: str = "equal_width"):
    return ece(records, n_bins, scheme).ece


@register_metric("sharpness", needs_truth=False, per_instance=False, kinds=("gaussian",))
def _m_sharpness(records):
    return sharpness(records)


@register_metric("regression_calibration_error", per_instance=False, kinds=("gaussian",))
def _m_rce(records, levels=(0.5, 0.7, 0.9)):
    return regression_calibration_error(records, levels)
