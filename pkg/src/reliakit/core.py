"""Domain data model, prediction-log I/O, dataset slicing and the shared PRNG.

Prediction logs are JSON lines. The first line is a header naming the payload
kind; every following non-blank line is one record::

    {"reliakit_log": 1, "kind": "classification"}
    {"id": "a", "index": 0, "pred": {"label": 1, "probs": [0.2, 0.8]}, "truth": 1}

See ``docs/formats.md`` for the per-kind grammar.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, Union

import numpy as np

from .errors import LogFormatError, MissingTruthError, ValidationError

LOG_VERSION = 1
PROB_SUM_TOL = 1e-6
LOG_CLAMP = 1e-12

KINDS = ("classification", "gaussian", "detection", "ensemble", "labeled")


def clamp_probs(p):
    """Clamp probabilities to [1e-12, 1] ahead of a logarithm."""
    return np.clip(np.asarray(p, dtype=np.float64), LOG_CLAMP, 1.0)


# -- predictive distributions -------------------------------------------------


@dataclass(frozen=True)
class ClassProbVector:
    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(v) for v in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) < 2:
            raise ValidationError("a class probability vector needs at least 2 entries")
        for v in probs:
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"probability {v!r} outside [0, 1]")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"probabilities sum to {total:.6g}")

    @classmethod
    def normalized(cls, values) -> "ClassProbVector":
        """Build from non-negative weights, renormalizing exactly."""
        arr = np.asarray(values, dtype=np.float64)
        arr = np.clip(arr, 0.0, None)
        return cls(tuple(arr / arr.sum()))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, i: int) -> float:
        return self.probs[i]

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class ClassPrediction:
    label: int
    probs: ClassProbVector


@dataclass(frozen=True)
class GaussianPrediction:
    mean: float
    stddev: float

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "stddev", float(self.stddev))
        if not (math.isfinite(self.mean) and math.isfinite(self.stddev)):
            raise ValidationError("gaussian mean and stddev must be finite")
        if self.stddev <= 0:
            raise ValidationError(f"gaussian stddev must be > 0, got {self.stddev}")


@dataclass(frozen=True)
class EnsembleClassPrediction:
    members: tuple[ClassProbVector, ...]

    def __post_init__(self):
        members = tuple(
            m if isinstance(m, ClassProbVector) else ClassProbVector(tuple(m)) for m in self.members
        )
        object.__setattr__(self, "members", members)
        if len(members) < 2:
            raise ValidationError("an ensemble needs at least 2 members")
        if len({len(m) for m in members}) != 1:
            raise ValidationError("ensemble members have mismatched lengths")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([m.probs for m in self.members], dtype=np.float64)


# -- detection payloads -------------------------------------------------------


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = [float(v) for v in (self.x_min, self.y_min, self.x_max, self.y_max)]
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("bounding box coordinates must be finite")
        if not (vals[0] < vals[2] and vals[1] < vals[3]):
            raise ValidationError(f"degenerate bounding box {vals}")
        for name, v in zip(("x_min", "y_min", "x_max", "y_max"), vals):
            object.__setattr__(self, name, v)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


ClassId = Union[int, str]


@dataclass(frozen=True)
class GroundTruthObject:
    bbox: BBox
    class_id: ClassId


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_id: ClassId
    confidence: float

    def __post_init__(self):
        c = float(self.confidence)
        if not (0.0 <= c <= 1.0):
            raise ValidationError(f"detection confidence {c} outside [0, 1]")
        object.__setattr__(self, "confidence", c)


@dataclass(frozen=True)
class DetectionSet:
    detections: tuple[Detection, ...] = ()


Payload = Union[ClassPrediction, GaussianPrediction, DetectionSet, EnsembleClassPrediction, None]

_PAYLOAD_KIND = {
    ClassPrediction: "classification",
    GaussianPrediction: "gaussian",
    DetectionSet: "detection",
    EnsembleClassPrediction: "ensemble",
    type(None): "labeled",
}


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    index: int
    payload: Payload = None
    truth: Any = None
    features: tuple[float, ...] | None = None
    tags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.index < 0:
            raise ValidationError(f"record {self.id!r}: index must be non-negative")
        if self.features is not None:
            object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        if not isinstance(self.tags, frozenset):
            object.__setattr__(self, "tags", frozenset(self.tags))
        if self.truth is not None:
            _check_truth(self.kind, self.truth, self.id)

    @property
    def kind(self) -> str:
        return _PAYLOAD_KIND[type(self.payload)]

    @property
    def has_truth(self) -> bool:
        return self.truth is not None


def _check_truth(kind: str, truth, rid: str) -> None:
    if kind in ("classification", "ensemble"):
        if isinstance(truth, bool) or not isinstance(truth, (int, np.integer)):
            raise ValidationError(f"record {rid!r}: class truth must be an integer class id")
    elif kind == "gaussian":
        if not isinstance(truth, (int, float)) or not math.isfinite(truth):
            raise ValidationError(f"record {rid!r}: regression truth must be a finite number")
    elif kind == "detection":
        if not all(isinstance(t, GroundTruthObject) for t in truth):
            raise ValidationError(f"record {rid!r}: detection truth must be ground-truth objects")


def require_truth(record: PredictionRecord):
    if record.truth is None:
        raise MissingTruthError(record.id)
    return record.truth


def class_probs(record: PredictionRecord) -> ClassProbVector:
    """The predictive distribution p(y|x) carried by a classification record."""
    payload = record.payload
    if isinstance(payload, ClassPrediction):
        return payload.probs
    if isinstance(payload, EnsembleClassPrediction):
        from .uncertainty import ensemble_mean

        return ensemble_mean(payload)
    raise ValidationError(f"record {record.id!r} ({record.kind}) has no class probabilities")


def predicted_label(record: PredictionRecord) -> int:
    payload = record.payload
    if isinstance(payload, ClassPrediction):
        return payload.label
    return class_probs(record).argmax()


# -- log (de)serialization ----------------------------------------------------


def _bbox(raw, where: str) -> BBox:
    if not isinstance(raw, list) or len(raw) != 4:
        raise ValidationError(f"{where}: bbox must be [x_min, y_min, x_max, y_max]")
    return BBox(*raw)


def _parse_payload(kind: str, raw: dict):
    pred = raw.get("pred")
    if kind == "labeled":
        if pred is not None:
            raise ValidationError("labeled records carry no 'pred'")
        return None
    if pred is None:
        raise ValidationError("missing 'pred'")
    if kind == "classification":
        probs = ClassProbVector(tuple(pred["probs"]))
        label = pred.get("label")
        label = probs.argmax() if label is None else label
        if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < len(probs):
            raise ValidationError(f"predicted label {label!r} out of range")
        return ClassPrediction(label, probs)
    if kind == "gaussian":
        return GaussianPrediction(pred["mean"], pred["stddev"])
    if kind == "ensemble":
        return EnsembleClassPrediction(tuple(ClassProbVector(tuple(m)) for m in pred["members"]))
    if kind == "detection":
        return DetectionSet(
            tuple(
                Detection(_bbox(d["bbox"], "detection"), d["class_id"], d["confidence"])
                for d in pred
            )
        )
    raise ValidationError(f"unknown payload kind {kind!r}")


def _parse_truth(kind: str, raw):
    if raw is None:
        return None
    if kind == "detection":
        return tuple(GroundTruthObject(_bbox(t["bbox"], "truth"), t["class_id"]) for t in raw)
    if kind == "labeled" and isinstance(raw, float):
        return raw
    return raw


def record_from_dict(kind: str, raw: dict, default_index: int) -> PredictionRecord:
    if not isinstance(raw, dict):
        raise ValidationError("record must be a JSON object")
    if "id" not in raw:
        raise ValidationError("missing 'id'")
    payload = _parse_payload(kind, raw)
    features = raw.get("features")
    return PredictionRecord(
        id=str(raw["id"]),
        index=int(raw.get("index", default_index)),
        payload=payload,
        truth=_parse_truth(kind, raw.get("truth")),
        features=None if features is None else tuple(features),
        tags=frozenset(raw.get("tags", ())),
    )


def record_to_dict(record: PredictionRecord) -> dict:
    out: dict[str, Any] = {"id": record.id, "index": record.index}
    p = record.payload
    if isinstance(p, ClassPrediction):
        out["pred"] = {"label": p.label, "probs": list(p.probs.probs)}
    elif isinstance(p, GaussianPrediction):
        out["pred"] = {"mean": p.mean, "stddev": p.stddev}
    elif isinstance(p, EnsembleClassPrediction):
        out["pred"] = {"members": [list(m.probs) for m in p.members]}
    elif isinstance(p, DetectionSet):
        out["pred"] = [
            {"bbox": d.bbox.as_list(), "class_id": d.class_id, "confidence": d.confidence}
            for d in p.detections
        ]
    if record.truth is not None:
        if record.kind == "detection":
            out["truth"] = [{"bbox": t.bbox.as_list(), "class_id": t.class_id} for t in record.truth]
        else:
            out["truth"] = record.truth
    if record.features is not None:
        out["features"] = list(record.features)
    if record.tags:
        out["tags"] = sorted(record.tags)
    return out


def load_log(path: str | os.PathLike, kind: str | None = None) -> list[PredictionRecord]:
    """Read and validate a prediction log; records come back in index order."""
    path = os.fspath(path)
    records: list[PredictionRecord] = []
    header_kind = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"malformed JSON ({exc.msg})", lineno, path) from None
            if header_kind is None:
                if not isinstance(obj, dict) or "reliakit_log" not in obj:
                    raise LogFormatError("first line must be the log header", lineno, path)
                header_kind = obj.get("kind")
                if header_kind not in KINDS:
                    raise LogFormatError(f"unknown payload kind {header_kind!r}", lineno, path)
                if kind is not None and kind != header_kind:
                    raise LogFormatError(
                        f"log holds {header_kind!r} records, expected {kind!r}", lineno, path
                    )
                continue
            try:
                records.append(record_from_dict(header_kind, obj, len(records)))
            except (ValidationError, KeyError, TypeError, ValueError) as exc:
                msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise LogFormatError(msg, lineno, path) from None
    validate_records(records, path)
    return sorted(records, key=lambda r: r.index)


def validate_records(records: Sequence[PredictionRecord], path: str | None = None) -> None:
    seen_ids: set[str] = set()
    seen_idx: set[int] = set()
    for r in records:
        if r.id in seen_ids:
            raise LogFormatError(f"duplicate id {r.id!r}", path=path)
        if r.index in seen_idx:
            raise LogFormatError(f"duplicate index {r.index}", path=path)
        seen_ids.add(r.id)
        seen_idx.add(r.index)


def dumps_record(record: PredictionRecord) -> str:
    return json.dumps(record_to_dict(record), sort_keys=True, separators=(",", ":"))


def write_log(path: str | os.PathLike, records: Iterable[PredictionRecord], kind: str) -> int:
    if kind not in KINDS:
        raise ValidationError(f"unknown payload kind {kind!r}")
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"reliakit_log": LOG_VERSION, "kind": kind}) + "\n")
        for r in records:
            if r.kind != kind:
                raise ValidationError(f"record {r.id!r} is {r.kind}, log is {kind}")
            fh.write(dumps_record(r) + "\n")
            n += 1
    return n


# -- slicing ------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSlice:
    """A named record selector. A slice with no constraints selects everything.

    All given constraints must hold: ``tags_any`` needs one shared tag,
    ``tags_all`` needs every tag, ``exclude_tags`` forbids them, ``ids`` is an
    allow-list and ``index_range`` is a half-open ``[lo, hi)`` interval.
    """

    name: str = "all"
    tags_any: frozenset[str] = frozenset()
    tags_all: frozenset[str] = frozenset()
    exclude_tags: frozenset[str] = frozenset()
    ids: frozenset[str] | None = None
    index_range: tuple[int, int] | None = None
    predicate: Callable[[PredictionRecord], bool] | None = field(default=None, compare=False)

    @classmethod
    def all(cls) -> "DatasetSlice":
        return cls("all")

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetSlice":
        ids = raw.get("ids")
        rng = raw.get("index_range")
        return cls(
            name=raw["name"],
            tags_any=frozenset(raw.get("tags_any", ())),
            tags_all=frozenset(raw.get("tags_all", ())),
            exclude_tags=frozenset(raw.get("exclude_tags", ())),
            ids=None if ids is None else frozenset(str(i) for i in ids),
            index_range=None if rng is None else (int(rng[0]), int(rng[1])),
        )

    def matches(self, r: PredictionRecord) -> bool:
        if self.tags_any and not (self.tags_any & r.tags):
            return False
        if self.tags_all and not self.tags_all <= r.tags:
            return False
        if self.exclude_tags & r.tags:
            return False
        if self.ids is not None and r.id not in self.ids:
            return False
        if self.index_range is not None and not (self.index_range[0] <= r.index < self.index_range[1]):
            return False
        if self.predicate is not None and not self.predicate(r):
            return False
        return True


def slice(dataset: Sequence[PredictionRecord], s: DatasetSlice) -> list[PredictionRecord]:  # noqa: A001
    return [r for r in dataset if s.matches(r)]


# -- randomness ---------------------------------------------------------------

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed <= MAX_SEED:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def make_rng(seed: int) -> np.random.Generator:
    """The toolkit PRNG: PCG64 seeded through ``SeedSequence``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(check_seed(seed))))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(check_seed(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def features_matrix(records: Sequence[PredictionRecord]) -> np.ndarray:
    if any(r.features is None for r in records):
        missing = next(r.id for r in records if r.features is None)
        raise ValidationError(f"record {missing!r} has no features")
    return np.array([r.features for r in records], dtype=np.float64).reshape(len(records), -1)
