"""Self-assessment metrics over predictive probabilities and ensembles.

All entropies are in nats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ClassProbVector,
    EnsembleClassPrediction,
    GaussianPrediction,
    PredictionRecord,
    clamp_probs,
    class_probs,
)
from .errors import ValidationError
from .losses import register_metric


@dataclass(frozen=True)
class UncertaintyScore:
    value: float
    metric: str

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class UncertaintyDecomposition:
    total: float
    aleatoric: float
    epistemic: float


def _vec(p) -> np.ndarray:
    return p.array if isinstance(p, ClassProbVector) else np.asarray(p, dtype=np.float64)


def max_prob(p: ClassProbVector) -> UncertaintyScore:
    return UncertaintyScore(float(np.max(_vec(p))), "max_prob")


def margin(p: ClassProbVector) -> UncertaintyScore:
    """Gap between the highest and second-highest class probability."""
    top2 = np.sort(_vec(p))[-2:]
    return UncertaintyScore(float(top2[1] - top2[0]), "margin")


def _entropy(arr: np.ndarray) -> float:
    return float(-np.sum(arr * np.log(clamp_probs(arr))))


def entropy(p: ClassProbVector) -> UncertaintyScore:
    return UncertaintyScore(_entropy(_vec(p)), "entropy")


def gaussian_entropy(g: GaussianPrediction) -> UncertaintyScore:
    return UncertaintyScore(0.5 * math.log(2 * math.pi * math.e * g.stddev**2), "gaussian_entropy")


def _members(e: EnsembleClassPrediction) -> np.ndarray:
    if not isinstance(e, EnsembleClassPrediction):
        e = EnsembleClassPrediction(tuple(e))
    return e.matrix


def ensemble_mean(e: EnsembleClassPrediction) -> ClassProbVector:
    """Uniformly weighted average of the members' predictive distributions."""
    mean = _members(e).mean(axis=0)
    return ClassProbVector(tuple(mean / mean.sum()))


def model_uncertainty_variance(e: EnsembleClassPrediction) -> UncertaintyScore:
    """Population variance across members, averaged over classes."""
    return UncertaintyScore(float(_members(e).var(axis=0).mean()), "model_variance")


def decompose(e: EnsembleClassPrediction) -> UncertaintyDecomposition:
    m = _members(e)
    total = _entropy(m.mean(axis=0))
    aleatoric = float(np.mean([_entropy(row) for row in m]))
    return UncertaintyDecomposition(total, aleatoric, total - aleatoric)


def select_for_labeling(
    pool: Sequence[PredictionRecord], k: int, strategy: str = "least-confidence"
) -> list[str]:
    """Ids of the ``k`` least confident records, ties broken by ascending id."""
    if strategy != "least-confidence":
        raise ValidationError(f"unknown selection strategy {strategy!r}")
    if k < 0:
        raise ValidationError("k must be non-negative")
    ranked = sorted(pool, key=lambda r: (max_prob(class_probs(r)).value, r.id))
    return [r.id for r in ranked[:k]]


# -- registry entries ---------------------------------------------------------


def _ensemble(r: PredictionRecord) -> EnsembleClassPrediction:
    if not isinstance(r.payload, EnsembleClassPrediction):
        raise ValidationError(f"record {r.id!r} ({r.kind}) is not an ensemble prediction")
    return r.payload


@register_metric("max_prob", needs_truth=False, kinds=("classification", "ensemble"))
def _m_max_prob(r):
    return max_prob(class_probs(r)).value


@register_metric("margin", needs_truth=False, kinds=("classification", "ensemble"))
def _m_margin(r):
    return margin(class_probs(r)).value


@register_metric("entropy", needs_truth=False, kinds=("classification", "ensemble"))
def _m_entropy(r):
    return entropy(class_probs(r)).value


@register_metric("gaussian_entropy", needs_truth=False, kinds=("gaussian",))
def _m_gaussian_entropy(r):
    if not isinstance(r.payload, GaussianPrediction):
        raise ValidationError(f"record {r.id!r} ({r.kind}) is not a gaussian prediction")
    return gaussian_entropy(r.payload).value


@register_metric("model_variance", needs_truth=False, kinds=("ensemble",))
def _m_model_variance(r):
    return model_uncertainty_variance(_ensemble(r)).value


@register_metric("epistemic", needs_truth=False, kinds=("ensemble",))
def _m_epistemic(r):
    return decompose(_ensemble(r)).epistemic


@register_metric("aleatoric", needs_truth=False, kinds=("ensemble",))
def _m_aleatoric(r):
    return decompose(_ensemble(r)).aleatoric
