"""Synthetic Gaussian-mixture data, distribution shifts, rebalancing and a
full-batch gradient-descent linear trainer.

A ``GeneratorSpec`` is the ground-truth joint distribution. By default a
sample's label is its mixture component. A spec produced by covariate shift
carries a ``label_rule``: features come from the shifted mixture but labels
are drawn from the *reference* spec's posterior p(y|x), so the labeling
function is unchanged while p(x) moves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import ClassProbVector, PredictionRecord, make_rng
from .errors import ValidationError


@dataclass(frozen=True)
class GeneratorSpec:
    priors: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    variances: tuple[tuple[float, ...], ...]
    noise_rate: float = 0.0
    label_rule: "GeneratorSpec | None" = None

    def __post_init__(self):
        priors = tuple(float(p) for p in self.priors)
        means = tuple(tuple(float(v) for v in row) for row in self.means)
        variances = tuple(tuple(float(v) for v in row) for row in self.variances)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        k = len(priors)
        if k < 2:
            raise ValidationError("a generator needs at least 2 classes")
        if any(p < 0 for p in priors) or abs(math.fsum(priors) - 1.0) > 1e-9:
            raise ValidationError("class priors must be a probability vector")
        if len(means) != k or len(variances) != k:
            raise ValidationError("one mean and one variance row per class")
        dims = {len(r) for r in means} | {len(r) for r in variances}
        if len(dims) != 1 or 0 in dims:
            raise ValidationError("inconsistent feature dimension")
        if any(v <= 0 or not math.isfinite(v) for row in variances for v in row):
            raise ValidationError("variances must be positive and finite")
        if not 0.0 <= self.noise_rate < 0.5:
            raise ValidationError("label-noise rate must be in [0, 0.5)")
        if self.label_rule is not None and (
            self.label_rule.n_classes != k or self.label_rule.dim != self.dim
        ):
            raise ValidationError("label rule must share class count and dimension")

    @property
    def n_classes(self) -> int:
        return len(self.priors)

    @property
    def dim(self) -> int:
        return len(self.means[0])

    @classmethod
    def from_dict(cls, raw: Mapping) -> "GeneratorSpec":
        """A scalar variance for a class means an isotropic Gaussian."""
        try:
            means = tuple(tuple(m) for m in raw["means"])
            variances = tuple(
                tuple(v) if isinstance(v, (list, tuple)) else (v,) * len(means[i])
                for i, v in enumerate(raw["variances"])
            )
            return cls(
                priors=tuple(raw["priors"]),
                means=means,
                variances=variances,
                noise_rate=float(raw.get("noise_rate", 0.0)),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed generator spec: {exc!r}") from None


@dataclass(frozen=True)
class ShiftSpec:
    kind: str
    translation: tuple[float, ...] | None = None
    priors: tuple[float, ...] | None = None
    permutation: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("covariate", "label", "concept"):
            raise ValidationError(f"unknown shift kind {self.kind!r}")
        need = {"covariate": "translation", "label": "priors", "concept": "permutation"}[self.kind]
        if getattr(self, need) is None:
            raise ValidationError(f"{self.kind} shift needs '{need}'")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ShiftSpec":
        def tup(key):
            return None if raw.get(key) is None else tuple(raw[key])

        return cls(raw["kind"], tup("translation"), tup("priors"), tup("permutation"))


def posterior(spec: GeneratorSpec, X) -> np.ndarray:
    """p(y|x) under the generator's mixture (its own components, ignoring noise)."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, spec.dim)
    mu = np.asarray(spec.means)
    var = np.asarray(spec.variances)
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(spec.priors))
    diff = X[:, None, :] - mu[None, :, :]
    ll = -0.5 * np.sum(diff**2 / var + np.log(2 * np.pi * var), axis=2)
    z = ll + logp
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] > cdf).sum(axis=1), probs.shape[1] - 1)


def generate_arrays(spec: GeneratorSpec, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 0:
        raise ValidationError("n must be non-negative")
    rng = make_rng(seed)
    k = spec.n_classes
    comps = rng.choice(k, size=n, p=np.asarray(spec.priors))
    mu = np.asarray(spec.means)[comps]
    sd = np.sqrt(np.asarray(spec.variances))[comps]
    X = mu + sd * rng.standard_normal((n, spec.dim))
    if spec.label_rule is None:
        y = comps.astype(np.int64)
    else:
        y = _sample_categorical(rng, posterior(spec.label_rule, X)).astype(np.int64)
    if spec.noise_rate > 0:
        flip = rng.random(n) < spec.noise_rate
        offset = rng.integers(1, k, size=n)
        y = np.where(flip, (y + offset) % k, y)
    return X, y


def generate(spec: GeneratorSpec, n: int, seed: int, id_prefix: str = "s") -> list[PredictionRecord]:
    """``n`` labeled records with features; identical for identical seeds."""
    X, y = generate_arrays(spec, n, seed)
    return [
        PredictionRecord(
            id=f"{id_prefix}{i}",
            index=i,
            payload=None,
            truth=int(y[i]),
            features=tuple(X[i]),
            tags=frozenset({f"class:{int(y[i])}"}),
        )
        for i in range(n)
    ]


def apply_shift(spec: GeneratorSpec, shift: ShiftSpec) -> GeneratorSpec:
    k = spec.n_classes
    if shift.kind == "covariate":
        t = np.asarray(shift.translation, dtype=np.float64)
        if t.shape != (spec.dim,):
            raise ValidationError("translation must match the feature dimension")
        if not t.any():
            return spec
        rule = spec.label_rule if spec.label_rule is not None else replace(spec, noise_rate=0.0)
        means = tuple(tuple(np.asarray(m) + t) for m in spec.means)
        return replace(spec, means=means, label_rule=rule)
    if shift.kind == "label":
        if spec.label_rule is not None:
            raise ValidationError("label shift is undefined for a spec with a separate label rule")
        priors = tuple(float(p) for p in shift.priors)
        if len(priors) != k:
            raise ValidationError("new priors must have one entry per class")
        return replace(spec, priors=priors)
    perm = tuple(int(c) for c in shift.permutation)
    if sorted(perm) != list(range(k)):
        raise ValidationError(f"{perm} is not a permutation of {k} classes")
    if perm == tuple(range(k)):
        return spec
    if spec.label_rule is not None:
        return replace(spec, label_rule=apply_shift(spec.label_rule, shift))
    # class c now owns component perm[c] along with its prior: same p(x), new p(y|x)
    return replace(
        spec,
        priors=tuple(spec.priors[p] for p in perm),
        means=tuple(spec.means[p] for p in perm),
        variances=tuple(spec.variances[p] for p in perm),
    )


def rebalance(
    records: Sequence[PredictionRecord],
    target: Mapping[int, float] | Sequence[float],
    mode: str = "under",
    seed: int = 0,
) -> list[PredictionRecord]:
    """Under-sample (remove) or over-sample (duplicate) classes toward ``target``.

    Classes with target prior 0 are dropped. Duplicates get fresh ids of the
    form ``<id>#dup<j>`` and indices after the largest input index.
    """
    if mode not in ("under", "over"):
        raise ValidationError(f"unknown rebalance mode {mode!r}")
    if not isinstance(target, Mapping):
        target = dict(enumerate(target))
    by_class: dict[int, list[int]] = {}
    for pos, r in enumerate(records):
        by_class.setdefault(r.truth, []).append(pos)
    for c, t in target.items():
        if t > 0 and c not in by_class:
            raise ValidationError(f"class {c!r} has positive target prior but no records")
    active = {c: t for c, t in target.items() if t > 0}
    ratio = [len(by_class[c]) / t for c, t in active.items()]
    total = min(ratio) if mode == "under" else max(ratio)
    rng = make_rng(seed)
    keep: list[int] = []
    extra: list[int] = []
    for c in sorted(active, key=str):
        members = by_class[c]
        want = int(round(total * active[c]))
        if mode == "under":
            want = min(want, len(members))
            chosen = rng.choice(len(members), size=want, replace=False) if want < len(members) else range(want)
            keep.extend(members[i] for i in chosen)
        else:
            keep.extend(members)
            if want > len(members):
                extra.extend(members[i] for i in rng.integers(0, len(members), size=want - len(members)))
    out = [records[i] for i in sorted(keep)]
    next_index = max((r.index for r in records), default=-1) + 1
    dup_count: dict[str, int] = {}
    for pos in extra:
        r = records[pos]
        j = dup_count[r.id] = dup_count.get(r.id, 0) + 1
        out.append(replace(r, id=f"{r.id}#dup{j}", index=next_index))
        next_index += 1
    return out


# -- linear models ------------------------------------------------------------


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    biases: np.ndarray
    task: str = "classification"
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[0]

    def scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, self.weights.shape[1])
        return X @ self.weights.T + self.biases

    def predict_proba(self, X) -> np.ndarray:
        z = self.scores(X)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "LinearModel":
        w = np.asarray(raw["weights"], dtype=np.float64)
        b = np.asarray(raw["biases"], dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValidationError("linear model needs a K x d weight matrix and K biases")
        return cls(w, b, raw.get("task", "classification"))


def fit_linear(
    X,
    y,
    epochs: int = 200,
    learning_rate: float = 0.1,
    task: str = "classification",
    n_classes: int | None = None,
    sample_weight=None,
) -> LinearModel:
    """Full-batch gradient descent from all-zero parameters.

    Classification minimizes weighted mean cross-entropy of a softmax model,
    regression the weighted mean squared error of a single output.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("features must be an n x d matrix")
    n, d = X.shape
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValidationError("one target per feature row")
    if n < 2:
        raise ValidationError("training needs at least 2 records")
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise ValidationError("sample weights must be n non-negative values with positive sum")
    w = w / w.sum()
    if task == "classification":
        k = int(n_classes if n_classes is not None else max(int(y.max()) + 1, 2))
        onehot = np.zeros((n, k))
        onehot[np.arange(n), y.astype(np.int64)] = 1.0
    elif task == "regression":
        k = 1
        target = y.astype(np.float64)
    else:
        raise ValidationError(f"unknown task {task!r}")
    W = np.zeros((k, d))
    b = np.zeros(k)
    history = []
    for _ in range(epochs):
        z = X @ W.T + b
        if task == "classification":
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            P = e / e.sum(axis=1, keepdims=True)
            history.append(float(-np.sum(w * np.log(np.clip(P[onehot > 0], 1e-300, None)))))
            g = (P - onehot) * w[:, None]
        else:
            r = z[:, 0] - target
            history.append(float(np.sum(w * r * r)))
            g = (2.0 * r * w)[:, None]
        W -= learning_rate * (g.T @ X)
        b -= learning_rate * g.sum(axis=0)
    return LinearModel(W, b, task, tuple(history))


def records_to_arrays(records: Sequence[PredictionRecord]) -> tuple[np.ndarray, np.ndarray]:
    from .core import features_matrix, require_truth

    return features_matrix(records), np.array([require_truth(r) for r in records])


def train_linear(
    records: Sequence[PredictionRecord],
    epochs: int = 200,
    learning_rate: float = 0.1,
    seed: int = 0,
    weights=None,
    task: str = "classification",
    n_classes: int | None = None,
) -> LinearModel:
    """Train on labeled records. ``seed`` is accepted for interface symmetry;
    full-batch descent from zero parameters involves no randomness."""
    X, y = records_to_arrays(records)
    if len({len(r.features) for r in records}) > 1:
        raise ValidationError("records have inconsistent feature dimension")
    return fit_linear(X, y, epochs, learning_rate, task, n_classes, weights)


def predict(model: LinearModel, features) -> ClassProbVector | float:
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (model.weights.shape[1],):
        raise ValidationError("feature dimension does not match the model")
    if model.task == "regression":
        return float(model.scores(x)[0, 0])
    return ClassProbVector(tuple(model.predict_proba(x)[0]))


def noisy_classifier(y, accuracy: float, n_classes: int, seed: int) -> np.ndarray:
    """Predicted labels that equal ``y`` with probability ``accuracy`` and are
    otherwise uniform over the other classes."""
    rng = make_rng(seed)
    y = np.asarray(y, dtype=np.int64)
    wrong = rng.random(y.shape[0]) >= accuracy
    offset = rng.integers(1, n_classes, size=y.shape[0])
    return np.where(wrong, (y + offset) % n_classes, y)
