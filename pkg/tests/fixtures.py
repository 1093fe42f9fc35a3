"""Hand-built fixtures shared by unit, CLI and acceptance tests."""
import json
import os

import numpy as np

from reliakit import core, synth
from reliakit.core import (
    BBox, ClassPrediction, ClassProbVector, Detection, DetectionSet, GaussianPrediction,
    GroundTruthObject, PredictionRecord,
)


def cls_record(i, probs, truth=None, tags=(), features=None):
    p = ClassProbVector(tuple(probs))
    return PredictionRecord(f"r{i}", i, ClassPrediction(p.argmax(), p), truth, features, frozenset(tags))


def reg_record(i, mean, stddev, truth=None):
    return PredictionRecord(f"g{i}", i, GaussianPrediction(mean, stddev), truth)


def box(x0, y0, x1, y1):
    return BBox(x0, y0, x1, y1)


def pedestrian_records(miss_one: bool = False):
    """Two street images; pedestrians detected at IoU 1 unless ``miss_one``."""
    p1 = GroundTruthObject(box(0, 0, 1, 2), "pedestrian")
    p2 = GroundTruthObject(box(5, 0, 6, 2), "pedestrian")
    car = GroundTruthObject(box(10, 0, 14, 2), "car")
    img0 = DetectionSet((Detection(p1.bbox, "pedestrian", 0.9), Detection(car.bbox, "car", 0.8)))
    dets = [Detection(p2.bbox, "pedestrian", 0.7)] if not miss_one else [
        Detection(box(5.5, 1.0, 6.5, 3.0), "pedestrian", 0.7)  # IoU 1/7
    ]
    img1 = DetectionSet(tuple(dets))
    return [
        PredictionRecord("img0", 0, img0, (p1, car), tags=frozenset({"pedestrian", "street"})),
        PredictionRecord("img1", 1, img1, (p2,), tags=frozenset({"pedestrian"})),
    ]


def pr_hand_case():
    """0.9 TP, 0.8 FP, 0.7 TP over 2 truths in one image."""
    t1 = GroundTruthObject(box(0, 0, 1, 1), 0)
    t2 = GroundTruthObject(box(2, 0, 3, 1), 0)
    dets = [
        Detection(box(0, 0, 1, 1), 0, 0.9),
        Detection(box(10, 10, 11, 11), 0, 0.8),
        Detection(box(2, 0, 3, 1), 0, 0.7),
    ]
    return [dets], [[t1, t2]]


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
    return path


def write_yaml_like(path, obj):
    # JSON is valid YAML
    return write_json(path, obj)


GENERATOR = {"priors": [0.5, 0.5], "means": [[0.0, 0.0], [3.0, 0.0]], "variances": [1.0, 1.0]}


def label_shift_logs(tmpdir, seed=0, n=5000):
    """Source/target logs from a 90%-accurate 3-class classifier with priors
    {0.2,0.3,0.5} -> {0.5,0.3,0.2}. Returns paths and true weights.

    Class counts are stratified (exactly n * prior per class, shuffled) so the
    realized priors equal the nominal ones.
    """
    q = np.array([0.2, 0.3, 0.5])
    t = np.array([0.5, 0.3, 0.2])
    rng = core.make_rng(seed)
    paths = []
    for name, pri, s in (("source", q, seed * 2 + 1), ("target", t, seed * 2 + 2)):
        y = rng.permutation(np.repeat(np.arange(3), np.round(pri * n).astype(int)))
        yhat = synth.noisy_classifier(y, 0.9, 3, s)
        recs = []
        for i, (yi, hi) in enumerate(zip(y, yhat)):
            probs = np.full(3, 0.05)
            probs[hi] = 0.9
            recs.append(cls_record(i, probs, int(yi)))
        path = os.path.join(tmpdir, f"{name}.jsonl")
        core.write_log(path, recs, "classification")
        paths.append(path)
    return paths[0], paths[1], t / q


def pedestrian_suite(tmpdir, miss_one=False):
    log = os.path.join(tmpdir, "det.jsonl")
    core.write_log(log, pedestrian_records(miss_one), "detection")
    cfg = {
        "seed": 1,
        "datasets": {"street": {"path": "det.jsonl", "kind": "detection"}},
        "slices": [{"name": "pedestrian", "tags_any": ["pedestrian"]}],
        "gates": [{"name": "pedestrian_recall", "dataset": "street", "slice": "pedestrian",
                   "metric": "AR@0.8", "bound": 1.0, "classes": ["pedestrian"]}],
        "tests": [{"name": "ap_all", "dataset": "street", "metric": "ap@0.5"}],
    }
    return write_yaml_like(os.path.join(tmpdir, "suite.yaml"), cfg)
