"""Black-box worst-case search over perturbation classes.

The search issues a fixed query sequence and the budget truncates it:

1. the clean input (delta = 0);
2. greedy sign refinement starting from delta = 0 (L-inf: each coordinate in
   turn is tried at +eps and -eps and kept if it helps; sparse: every single
   coordinate at +/-magnitude, then the k best combined);
3. random members of the class until the budget runs out.

The best loss seen is returned. Because the sequence does not depend on the
budget, a larger budget never returns a smaller loss. The result is a lower
bound on the worst case, never a certificate.
"""
from __future__ import annotations

import json
import math
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import ClassProbVector, PredictionRecord, clamp_probs, make_rng, require_truth
from .errors import ReliakitError, ValidationError
from .losses import absolute_error, squared_error
from .synth import LinearModel


@dataclass(frozen=True)
class LinfBall:
    epsilon: float

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValidationError("L-inf radius must be finite and >= 0")


@dataclass(frozen=True)
class SparseBudget:
    k: int
    magnitude: float

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("sparse budget k must be >= 1")
        if not (math.isfinite(self.magnitude) and self.magnitude > 0):
            raise ValidationError("sparse perturbation magnitude must be > 0")


PerturbationClass = LinfBall | SparseBudget


def parse_perturbation(text: str) -> PerturbationClass:
    """``linf:EPS`` or ``sparse:K:MAGNITUDE``."""
    parts = text.split(":")
    try:
        if parts[0] == "linf" and len(parts) == 2:
            return LinfBall(float(parts[1]))
        if parts[0] == "sparse" and len(parts) == 3:
            return SparseBudget(int(parts[1]), float(parts[2]))
    except ValueError:
        pass
    raise ValidationError(f"bad perturbation class {text!r}; use linf:EPS or sparse:K:MAG")


def perturbation_from_dict(raw: dict) -> PerturbationClass:
    kind = raw.get("kind")
    if kind == "linf":
        return LinfBall(float(raw["epsilon"]))
    if kind == "sparse":
        return SparseBudget(int(raw["k"]), float(raw["magnitude"]))
    raise ValidationError(f"unknown perturbation kind {kind!r}")


def in_class(delta, cls: PerturbationClass, tol: float = 1e-12) -> bool:
    delta = np.asarray(delta, dtype=np.float64)
    if isinstance(cls, LinfBall):
        return bool(np.all(np.abs(delta) <= cls.epsilon + tol))
    nz = delta[delta != 0]
    return nz.size <= cls.k and bool(np.all(np.abs(np.abs(nz) - cls.magnitude) <= tol))


# -- losses on raw model outputs ---------------------------------------------


def _as_probs(out) -> np.ndarray:
    if isinstance(out, ClassProbVector):
        return out.array
    return np.asarray(out, dtype=np.float64).ravel()


def _scalar(out) -> float:
    arr = np.asarray(out, dtype=np.float64).ravel()
    if arr.size != 1:
        raise ValidationError("regression loss needs a scalar model output")
    return float(arr[0])


OUTPUT_LOSSES: dict[str, Callable] = {
    "squared_error": lambda out, y: squared_error(_scalar(out), float(y)),
    "absolute_error": lambda out, y: absolute_error(_scalar(out), float(y)),
    "zero_one_error": lambda out, y: 0.0 if int(np.argmax(_as_probs(out))) == int(y) else 1.0,
    "negative_log_likelihood": lambda out, y: float(-np.log(clamp_probs(_as_probs(out)[int(y)]))),
}
OUTPUT_LOSSES["nll"] = OUTPUT_LOSSES["negative_log_likelihood"]


def output_loss(name: str) -> Callable:
    try:
        return OUTPUT_LOSSES[name]
    except KeyError:
        raise ValidationError(f"loss {name!r} is not usable for adversarial search") from None


# -- search -------------------------------------------------------------------


@dataclass(frozen=True)
class WorstCaseResult:
    delta: tuple[float, ...]
    perturbed_loss: float
    clean_loss: float
    queries_used: int


class _BudgetExhausted(Exception):
    pass


def default_budget(dim: int) -> int:
    return 100 + 2 * dim


def worst_case_search(
    model: Callable,
    x,
    y,
    loss: str,
    cls: PerturbationClass,
    budget: int | None = None,
    seed: int = 0,
) -> WorstCaseResult:
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.size
    if budget is None:
        budget = default_budget(d)
    if budget < 1:
        raise ValidationError("query budget must be >= 1")
    if isinstance(cls, SparseBudget) and cls.k > d:
        raise ValidationError(f"sparse budget k={cls.k} exceeds feature dimension {d}")
    loss_fn = output_loss(loss)
    queries = 0
    best_delta = np.zeros(d)
    best_loss = -math.inf

    def query(delta: np.ndarray) -> float:
        nonlocal queries, best_delta, best_loss
        if queries >= budget:
            raise _BudgetExhausted
        queries += 1
        value = float(loss_fn(model(x + delta), y))
        if value > best_loss:
            best_loss = value
            best_delta = delta.copy()
        return value

    clean = query(np.zeros(d))
    try:
        if isinstance(cls, LinfBall):
            if cls.epsilon > 0:
                _greedy_linf(query, d, cls.epsilon, clean)
                rng = make_rng(seed)
                while True:
                    query(rng.uniform(-cls.epsilon, cls.epsilon, size=d))
        else:
            _greedy_sparse(query, d, cls)
            rng = make_rng(seed)
            while True:
                delta = np.zeros(d)
                coords = rng.choice(d, size=cls.k, replace=False)
                delta[coords] = cls.magnitude * rng.choice([-1.0, 1.0], size=cls.k)
                query(delta)
    except _BudgetExhausted:
        pass
    return WorstCaseResult(tuple(best_delta), best_loss, clean, queries)


def _greedy_linf(query, d: int, eps: float, clean: float) -> None:
    cur = np.zeros(d)
    cur_loss = clean
    for j in range(d):
        keep = cur[j]
        best_v, best_loss = keep, cur_loss
        for s in (eps, -eps):
            cur[j] = s
            v = query(cur)
            if v > best_loss:
                best_v, best_loss = s, v
        cur[j] = best_v
        cur_loss = best_loss


def _greedy_sparse(query, d: int, cls: SparseBudget) -> None:
    single = []
    for j in range(d):
        for s in (cls.magnitude, -cls.magnitude):
            delta = np.zeros(d)
            delta[j] = s
            single.append((query(delta), j, s))
    best_per_coord: dict[int, tuple[float, float]] = {}
    for v, j, s in single:
        if j not in best_per_coord or v > best_per_coord[j][0]:
            best_per_coord[j] = (v, s)
    top = sorted(best_per_coord.items(), key=lambda item: (-item[1][0], item[0]))[: cls.k]
    delta = np.zeros(d)
    for j, (_, s) in top:
        delta[j] = s
    query(delta)


@dataclass(frozen=True)
class RiskEstimate:
    """Search-based adversarial risk; ``value`` is a lower bound on the true risk."""

    value: float
    clean_risk: float
    n: int
    lower_bound: bool = True

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"value": self.value, "clean_risk": self.clean_risk, "n": self.n, "lower_bound": True}


def _instance_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def adversarial_risk_estimate(
    model: Callable,
    dataset: Sequence[PredictionRecord],
    loss: str,
    cls: PerturbationClass,
    budget: int | None = None,
    seed: int = 0,
    workers: int = 1,
) -> RiskEstimate:
    if not dataset:
        raise ValidationError("adversarial risk needs a non-empty dataset")
    for r in dataset:
        require_truth(r)
        if r.features is None:
            raise ValidationError(f"record {r.id!r} has no features")
    seeds = _instance_seeds(seed, len(dataset))

    def one(i: int) -> WorstCaseResult:
        r = dataset[i]
        return worst_case_search(model, r.features, r.truth, loss, cls, budget, seeds[i])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(dataset))))
    else:
        results = [one(i) for i in range(len(dataset))]
    n = len(results)
    return RiskEstimate(
        math.fsum(r.perturbed_loss for r in results) / n,
        math.fsum(r.clean_loss for r in results) / n,
        n,
    )


# -- model adapters -----------------------------------------------------------


class LinearModelAdapter:
    """Query function over a ``LinearModel``: class probabilities or a scalar."""

    def __init__(self, model: LinearModel):
        self.model = model

    def __call__(self, x):
        if self.model.task == "regression":
            return float(self.model.scores(x)[0, 0])
        return self.model.predict_proba(x)[0]


class ProcessModel:
    """Query an external process: one JSON feature list per line on stdin,
    one JSON prediction (number or probability list) per line on stdout.

    Calls are serialized; the adapter is safe to share between threads.
    """

    def __init__(self, command: str | Sequence[str]):
        import threading

        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        self._lock = threading.Lock()

    def __call__(self, x):
        line = json.dumps([float(v) for v in np.asarray(x).ravel()])
        with self._lock:
            try:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
                reply = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ReliakitError(f"model process failed: {exc}") from exc
        if not reply:
            raise ReliakitError("model process closed its output")
        return json.loads(reply)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
