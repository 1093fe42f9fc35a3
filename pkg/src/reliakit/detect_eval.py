"""Object-detection evaluation: IoU/GIoU, one-to-one matching, failure
conditions, AP/AR/mAP and the detection satisficing gate.

Two matching protocols are used on purpose. ``match_detections`` solves the
maximum-total-IoU assignment per image and feeds the failure analysis.
``ap_at``/``ar_at`` use greedy confidence-ordered matching, which is what a
precision-recall curve is defined over.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .core import BBox, Detection, DetectionSet, GroundTruthObject, PredictionRecord, require_truth
from .errors import ValidationError
from .losses import Metric, register_pattern, zero_one_error

__all__ = [
    "BBox", "Detection", "GroundTruthObject", "MatchResult", "MatchedPair",
    "iou", "giou", "match_detections", "greedy_match", "classification_failure",
    "localization_failure", "ap_at", "ar_at", "mean_average_precision",
    "detection_satisficing_gate",
]


def _inter(a: BBox, b: BBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return w * h if w > 0 and h > 0 else 0.0


def iou(a: BBox, b: BBox) -> float:
    inter = _inter(a, b)
    return inter / (a.area + b.area - inter)


def giou(a: BBox, b: BBox) -> float:
    inter = _inter(a, b)
    union = a.area + b.area - inter
    hull = (max(a.x_max, b.x_max) - min(a.x_min, b.x_min)) * (max(a.y_max, b.y_max) - min(a.y_min, b.y_min))
    return inter / union - (hull - union) / hull


def iou_matrix(dets: Sequence[Detection], truths: Sequence[GroundTruthObject]) -> np.ndarray:
    out = np.zeros((len(dets), len(truths)))
    for i, d in enumerate(dets):
        for j, t in enumerate(truths):
            out[i, j] = iou(d.bbox, t.bbox)
    return out


@dataclass(frozen=True)
class MatchedPair:
    detection: int
    truth: int
    iou: float
    det: Detection | None = field(default=None, compare=False)
    gt: GroundTruthObject | None = field(default=None, compare=False)


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[MatchedPair, ...]
    unmatched_detections: tuple[int, ...]
    unmatched_truths: tuple[int, ...]

    @property
    def total_iou(self) -> float:
        return float(sum(p.iou for p in self.pairs))


def match_detections(
    dets: Sequence[Detection], truths: Sequence[GroundTruthObject], tau: float = 0.5
) -> MatchResult:
    """Maximum-total-IoU one-to-one matching (assignment on cost ``1 - IoU``).

    Assigned pairs with IoU below ``tau``, or with no overlap at all, are
    demoted to unmatched on both sides.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"IoU threshold {tau} outside [0, 1]")
    nd, nt = len(dets), len(truths)
    pairs: list[MatchedPair] = []
    if nd and nt:
        ious = iou_matrix(dets, truths)
        if nd <= nt:
            cols = kernels.linear_assignment(1.0 - ious)
            assigned = [(i, int(cols[i])) for i in range(nd)]
        else:
            rows = kernels.linear_assignment((1.0 - ious).T)
            assigned = sorted((int(rows[j]), j) for j in range(nt))
        for i, j in assigned:
            if ious[i, j] >= tau and ious[i, j] > 0:
                pairs.append(MatchedPair(i, j, float(ious[i, j]), dets[i], truths[j]))
    used_d = {p.detection for p in pairs}
    used_t = {p.truth for p in pairs}
    return MatchResult(
        tuple(pairs),
        tuple(i for i in range(nd) if i not in used_d),
        tuple(j for j in range(nt) if j not in used_t),
    )


def greedy_match(dets: Sequence[Detection], truths: Sequence[GroundTruthObject], tau: float = 0.5) -> MatchResult:
    """Confidence-ordered greedy matching (each detection takes the best free truth)."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    ious = iou_matrix(dets, truths)
    free = set(range(len(truths)))
    pairs = []
    for i in order:
        cands = [j for j in free if ious[i, j] >= tau and ious[i, j] > 0]
        if cands:
            j = max(cands, key=lambda j: (ious[i, j], -j))
            free.discard(j)
            pairs.append(MatchedPair(i, j, float(ious[i, j]), dets[i], truths[j]))
    pairs.sort(key=lambda p: p.detection)
    used = {p.detection for p in pairs}
    return MatchResult(tuple(pairs), tuple(i for i in range(len(dets)) if i not in used), tuple(sorted(free)))


def classification_failure(pair: MatchedPair) -> bool:
    return zero_one_error(pair.det.class_id, pair.gt.class_id) == 1.0


def localization_failure(pair: MatchedPair, tau_g: float = 0.8) -> bool:
    """True iff GIoU between the matched boxes is at most ``tau_g``."""
    return giou(pair.det.bbox, pair.gt.bbox) <= tau_g


# -- AP / AR ------------------------------------------------------------------


def _images(dets_per_image, truths_per_image):
    dets_per_image = [list(d.detections) if isinstance(d, DetectionSet) else list(d) for d in dets_per_image]
    truths_per_image = [list(t) for t in truths_per_image]
    if len(dets_per_image) != len(truths_per_image):
        raise ValidationError("detections and truths must cover the same images")
    return dets_per_image, truths_per_image


def _class_curves(dets_per_image, truths_per_image, tau: float, classes=None):
    """Per class: (total truths, TP flags in descending confidence order)."""
    dets_per_image, truths_per_image = _images(dets_per_image, truths_per_image)
    n_truth: dict = {}
    for truths in truths_per_image:
        for t in truths:
            n_truth[t.class_id] = n_truth.get(t.class_id, 0) + 1
    all_classes = set(n_truth)
    for dets in dets_per_image:
        all_classes.update(d.class_id for d in dets)
    if classes is not None:
        all_classes &= set(classes)
    curves = {}
    for c in sorted(all_classes, key=lambda v: (str(type(v)), v)):
        if n_truth.get(c, 0) == 0:
            warnings.warn(f"class {c!r} has no ground-truth objects; excluded", stacklevel=3)
            continue
        ranked = []
        for img, dets in enumerate(dets_per_image):
            for k, d in enumerate(dets):
                if d.class_id == c:
                    ranked.append((-d.confidence, img, k, d))
        ranked.sort(key=lambda r: r[:3])
        taken = [set() for _ in truths_per_image]
        flags = []
        for _, img, _, d in ranked:
            best, best_j = -1.0, -1
            for j, t in enumerate(truths_per_image[img]):
                if t.class_id != c or j in taken[img]:
                    continue
                v = iou(d.bbox, t.bbox)
                if v >= tau and v > 0 and v > best:
                    best, best_j = v, j
            if best_j >= 0:
                taken[img].add(best_j)
                flags.append(True)
            else:
                flags.append(False)
        curves[c] = (n_truth[c], np.asarray(flags, dtype=bool))
    return curves


def _average_precision(n_truth: int, flags: np.ndarray) -> float:
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_truth
    precision = tp / (tp + fp)
    # all-point interpolation: precision envelope integrated over recall steps
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def ap_at(dets_per_image, truths_per_image, tau: float, classes=None) -> float:
    """Class-averaged all-point average precision at IoU threshold ``tau``."""
    curves = _class_curves(dets_per_image, truths_per_image, tau, classes)
    if not curves:
        raise ValidationError("no class has ground-truth objects")
    return float(np.mean([_average_precision(n, f) for n, f in curves.values()]))


def ar_at(dets_per_image, truths_per_image, tau: float, classes=None) -> float:
    """Class-averaged fraction of truths matched by any detection (no confidence cutoff)."""
    curves = _class_curves(dets_per_image, truths_per_image, tau, classes)
    if not curves:
        raise ValidationError("no class has ground-truth objects")
    return float(np.mean([f.sum() / n for n, f in curves.values()]))


def mean_average_precision(dets_per_image, truths_per_image, taus: Sequence[float], classes=None) -> float:
    taus = list(taus)
    if not taus:
        raise ValidationError("at least one IoU threshold is required")
    aps = []
    for tau in taus:
        curves = _class_curves(dets_per_image, truths_per_image, tau, classes)
        aps.extend(_average_precision(n, f) for n, f in curves.values())
    if not aps:
        raise ValidationError("no class has ground-truth objects")
    return float(np.mean(aps))


# map is the name used in suite configs
map = mean_average_precision  # noqa: A001

COCO_TAUS = tuple(np.round(np.arange(0.5, 0.96, 0.05), 2))


def _split(records: Sequence[PredictionRecord]):
    dets, truths = [], []
    for r in records:
        if not isinstance(r.payload, DetectionSet):
            raise ValidationError(f"record {r.id!r} ({r.kind}) is not a detection record")
        dets.append(r.payload.detections)
        truths.append(require_truth(r))
    return dets, truths


def _dataset_metric(name: str, fn, tau):
    def run(records, classes=None):
        dets, truths = _split(records)
        return fn(dets, truths, tau, classes)

    return Metric(name, run, needs_truth=True, per_instance=False, kinds=("detection",))


register_pattern(r"ap@([0-9.]+)", lambda m: _dataset_metric(m.group(0), ap_at, float(m.group(1))))
register_pattern(r"ar@([0-9.]+)", lambda m: _dataset_metric(m.group(0), ar_at, float(m.group(1))))
register_pattern(r"map", lambda m: _dataset_metric("map", mean_average_precision, COCO_TAUS))


_GATE_METRIC = re.compile(r"(ap|ar)@([0-9.]+)", re.IGNORECASE)


def detection_satisficing_gate(dataset: Sequence[PredictionRecord], gate: Mapping):
    """Run ``{slice, metric: AP@tau|AR@tau, bound[, classes]}`` as a satisficing
    test that fails when the metric falls below ``bound``."""
    from .core import DatasetSlice
    from .testcase import Direction, TestCase, run_test_case

    metric = gate["metric"]
    if not _GATE_METRIC.fullmatch(metric):
        raise ValidationError(f"gate metric must be AP@tau or AR@tau, got {metric!r}")
    sl = gate.get("slice", DatasetSlice.all())
    if isinstance(sl, Mapping):
        sl = DatasetSlice.from_dict(sl)
    params = {"classes": gate["classes"]} if gate.get("classes") is not None else {}
    case = TestCase(
        name=gate.get("name", f"{metric} >= {gate['bound']}"),
        metric=metric,
        slice=sl,
        threshold=float(gate["bound"]),
        direction=Direction.LESS_IS_FAILURE,
        params=params,
    )
    return run_test_case(case, dataset)
