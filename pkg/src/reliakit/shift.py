"""Distribution-shift estimation, correction, testing and OOD scoring."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from . import kernels
from .core import ClassProbVector, PredictionRecord, class_probs, predicted_label, require_truth
from .errors import SingularMatrixError, ValidationError
from .losses import register_metric
from .synth import fit_linear

CONDITION_LIMIT = 1e6
WEIGHT_CLIP = (1e-3, 1e3)


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i][j]``: source validation instances predicted ``i`` with truth ``j``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValidationError("confusion matrix must be square")
        if np.any(c < 0) or c.sum() < 1:
            raise ValidationError("confusion counts must be non-negative with total >= 1")
        object.__setattr__(self, "counts", c)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def from_labels(cls, predicted, truth, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(predicted, dtype=np.int64), np.asarray(truth, dtype=np.int64)), 1)
        return cls(counts)

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord]) -> "ConfusionMatrix":
        k = len(class_probs(records[0]))
        return cls.from_labels(
            [predicted_label(r) for r in records], [require_truth(r) for r in records], k
        )


@dataclass(frozen=True)
class LabelShiftEstimate:
    weights: tuple[float, ...]
    condition_flag: bool
    condition: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights),
            "condition_flag": self.condition_flag,
            "condition": self.condition,
        }


def predicted_distribution(records: Sequence[PredictionRecord], n_classes: int | None = None) -> ClassProbVector:
    """Histogram of hard predicted labels on (unlabeled) deployment records."""
    labels = np.array([predicted_label(r) for r in records], dtype=np.int64)
    k = n_classes if n_classes is not None else len(class_probs(records[0]))
    hist = np.bincount(labels, minlength=k).astype(np.float64)
    return ClassProbVector(tuple(hist / hist.sum()))


def estimate_label_shift(
    c: ConfusionMatrix, target_pred_dist: ClassProbVector, ridge: bool = False
) -> LabelShiftEstimate:
    """Solve ``C w = mu`` for the prior ratio ``w`` of target over source.

    ``C`` is the confusion matrix as joint frequencies and ``mu`` the target
    predicted-label distribution. Negative solutions are clipped to zero.
    """
    if not isinstance(c, ConfusionMatrix):
        c = ConfusionMatrix(np.asarray(c))
    joint = c.counts.astype(np.float64) / c.counts.sum()
    mu = target_pred_dist.array if isinstance(target_pred_dist, ClassProbVector) else np.asarray(target_pred_dist, dtype=np.float64)
    if mu.shape != (c.n_classes,):
        raise ValidationError("target distribution length must match the confusion matrix")
    if ridge:
        joint = joint + 1e-6 * np.eye(c.n_classes)
    sv = np.linalg.svd(joint, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise SingularMatrixError("confusion matrix is singular; label shift is not identifiable")
    cond = float(sv[0] / sv[-1])
    w = np.linalg.solve(joint, mu)
    w = np.clip(w, 0.0, None)
    return LabelShiftEstimate(tuple(float(v) for v in w), cond > CONDITION_LIMIT, cond)


def correct_priors(p: ClassProbVector, est: LabelShiftEstimate) -> ClassProbVector:
    w = np.asarray(est.weights, dtype=np.float64)
    if w.shape != (len(p),):
        raise ValidationError("weight vector length must match the probability vector")
    adjusted = p.array * w
    if adjusted.sum() <= 0:
        raise ValidationError("all prior-correction weights are zero for this prediction")
    return ClassProbVector(tuple(adjusted / adjusted.sum()))


def label_shift_test(source_pred_hist, target_pred_hist) -> dict:
    """Chi-square two-sample test of predicted-label histograms.

    Classes empty in both histograms are dropped (and lose their degree of
    freedom). A ``warning`` entry appears when a histogram has fewer than
    5K counts.
    """
    a = np.asarray(source_pred_hist, dtype=np.float64)
    b = np.asarray(target_pred_hist, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("histograms must be 1-D and the same length")
    k = a.shape[0]
    if k < 2:
        raise ValidationError("need at least 2 classes")
    if a.sum() <= 0 or b.sum() <= 0:
        raise ValidationError("histograms must have positive totals")
    result = {}
    if min(a.sum(), b.sum()) < 5 * k:
        result["warning"] = f"histogram total below 5K={5 * k}; chi-square approximation is unreliable"
        warnings.warn(result["warning"], stacklevel=2)
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    table = np.vstack([a, b])
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / table.sum()
    statistic = float(np.sum((table - expected) ** 2 / expected))
    dof = int(keep.sum()) - 1
    p_value = float(stats.chi2.sf(statistic, dof)) if dof > 0 else 1.0
    result.update(statistic=statistic, p_value=p_value, dof=dof)
    return result


def importance_weights(
    source_features,
    target_features,
    seed: int = 0,
    epochs: int = 500,
    learning_rate: float = 0.5,
) -> np.ndarray:
    """Density-ratio weights for source instances from a logistic domain
    discriminator (target labeled 1), clipped to [1e-3, 1e3]."""
    S = np.asarray(source_features, dtype=np.float64)
    T = np.asarray(target_features, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if T.ndim == 1:
        T = T[:, None]
    if S.shape[0] == 0 or T.shape[0] == 0:
        raise ValidationError("source and target samples must be non-empty")
    if S.shape[1] != T.shape[1]:
        raise ValidationError(f"feature dimension mismatch: {S.shape[1]} vs {T.shape[1]}")
    X = np.vstack([S, T])
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    y = np.concatenate([np.zeros(len(S), dtype=np.int64), np.ones(len(T), dtype=np.int64)])
    model = fit_linear(Z, y, epochs=epochs, learning_rate=learning_rate, n_classes=2)
    g = model.predict_proba(Z[: len(S)])[:, 1]
    g = np.clip(g, 1e-12, 1 - 1e-12)
    w = g / (1.0 - g) * (len(S) / len(T))
    return np.clip(w, *WEIGHT_CLIP)


@dataclass(frozen=True)
class OODScore:
    value: float
    method: str

    def __float__(self) -> float:
        return self.value


def ood_maxprob(p: ClassProbVector) -> OODScore:
    return OODScore(float(1.0 - np.max(p.array)), "maxprob")


def _knn_inputs(train_sample, k: int):
    S = np.asarray(train_sample, dtype=np.float64)
    if S.size == 0:
        raise ValidationError("empty reference sample")
    if S.ndim == 1:
        S = S[:, None]
    if not 1 <= k <= S.shape[0]:
        raise ValidationError(f"k={k} outside [1, {S.shape[0]}]")
    return S


def ood_knn(train_sample, x, k: int) -> OODScore:
    """Euclidean distance from ``x`` to its k-th nearest reference point."""
    S = _knn_inputs(train_sample, k)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != S.shape[1]:
        raise ValidationError("query dimension does not match the reference sample")
    return OODScore(float(kernels.kth_neighbor_distance(S, x, k)[0]), "knn")


def ood_knn_scores(train_sample, queries, k: int) -> np.ndarray:
    """Vectorized ``ood_knn`` over many query points."""
    S = _knn_inputs(train_sample, k)
    Q = np.asarray(queries, dtype=np.float64).reshape(-1, S.shape[1])
    return kernels.kth_neighbor_distance(S, Q, k)


def auroc(scores, is_ood) -> float:
    """P(random OOD score > random in-distribution score), ties count half."""
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(is_ood, dtype=bool)
    n1 = int(lab.sum())
    n0 = lab.size - n1
    if n1 == 0 or n0 == 0:
        raise ValidationError("AUROC needs both OOD and in-distribution samples")
    ranks = stats.rankdata(s)
    return float((ranks[lab].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


@register_metric("ood_maxprob", needs_truth=False, kinds=("classification", "ensemble"))
def _m_ood_maxprob(r):
    return ood_maxprob(class_probs(r)).value
