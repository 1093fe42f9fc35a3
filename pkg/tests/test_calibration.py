import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from reliakit import calibration as cal
from reliakit.core import ClassProbVector
from reliakit.errors import DegenerateObjectiveError, ValidationError

from fixtures import cls_record, reg_record


def test_ece_hand_case():
    conf = [0.9, 0.9, 0.6, 0.6]
    correct = [1, 1, 1, 0]
    recs = [cls_record(i, [c, 1 - c], 0 if ok else 1) for i, (c, ok) in enumerate(zip(conf, correct))]
    rep = cal.ece(recs, n_bins=2)
    assert rep.ece == pytest.approx(0.1, abs=1e-15)
    assert [b.count for b in rep.bins] == [2, 2]


def test_ece_perfect():
    recs = [cls_record(i, [1.0, 0.0], 0) for i in range(5)]
    assert cal.ece(recs).ece == 0


def test_ece_calibrated_sampler():
    rng = np.random.default_rng(0)
    conf = rng.uniform(0.5, 1.0, 10000)
    correct = rng.random(10000) < conf
    assert cal.ece_from_arrays(conf, correct, 15, low=0.5).ece < 0.02


def test_ece_equal_mass():
    rng = np.random.default_rng(1)
    conf = rng.uniform(0.5, 1.0, 1000)
    rep = cal.ece_from_arrays(conf, rng.random(1000) < conf, 10, "equal_mass", 0.5)
    counts = [b.count for b in rep.bins]
    assert sum(counts) == 1000 and max(counts) - min(counts) <= 2
    with pytest.raises(ValidationError):
        cal.ece_from_arrays(conf, conf > 0.7, 10, "bogus")


@given(st.floats(-0.999999, 0.999999))
def test_erfinv_matches_scipy(y):
    assert cal.erfinv(y) == pytest.approx(special.erfinv(y), rel=1e-12, abs=1e-14)


def test_erfinv_tails():
    for y in (1 - 1e-15, 1 - 1e-12, 0.5, 0.0, -0.9999):
        assert cal.erfinv(y) == pytest.approx(special.erfinv(y), rel=1e-12, abs=1e-14)
    assert cal.interval_halfwidth(0.95) == pytest.approx(1.959963984540054, rel=1e-12)
    assert cal.erfinv(1.0) == math.inf and cal.erfinv(-1.0) == -math.inf
    with pytest.raises(ValidationError):
        cal.erfinv(1.5)
    with pytest.raises(ValidationError):
        cal.interval_halfwidth(1.0)


def _grid_oracle(logits, labels):
    grid = np.exp(np.linspace(math.log(0.05), math.log(20), 4001))
    nll = [cal.temperature_nll(logits, labels, t) for t in grid]
    return grid[int(np.argmin(nll))]


@pytest.mark.parametrize("t_true", [0.5, 1.0, 2.0])
def test_temperature_recovery(t_true):
    rng = np.random.default_rng(42)
    z = rng.normal(0, 2, size=(20000, 4))
    p = cal._softmax(z)
    labels = (rng.random((20000, 1)) > p.cumsum(axis=1)).sum(axis=1)
    logits = z * t_true
    fitted = cal.fit_temperature_logits(logits, labels).t
    assert abs(fitted - t_true) < 0.05
    assert abs(fitted - _grid_oracle(logits, labels)) < 0.01


def test_fit_temperature_records_and_degenerate():
    recs = [cls_record(i, [0.8, 0.2] if i % 5 else [0.2, 0.8], 0) for i in range(50)]
    t = cal.fit_temperature(recs)
    scaled = [cal.apply_temperature(r.payload.probs, t) for r in recs]
    assert all(s.argmax() == r.payload.probs.argmax() for s, r in zip(scaled, recs))
    with pytest.raises(DegenerateObjectiveError):
        cal.fit_temperature([cls_record(i, [0.5, 0.5], i % 2) for i in range(4)])


def test_apply_temperature():
    p = ClassProbVector((0.7, 0.2, 0.1))
    assert cal.apply_temperature(p, 1.0).probs == pytest.approx(p.probs, abs=1e-9)
    assert cal.apply_temperature(p, 1e6).probs == pytest.approx((1 / 3,) * 3, abs=1e-5)
    assert cal.apply_temperature(ClassProbVector((0.5, 0.5)), 0.5).probs == (0.5, 0.5)
    with pytest.raises(ValidationError):
        cal.Temperature(0)


def test_interval_coverage():
    assert cal.interval_coverage([reg_record(i, 1.0, 2.0, 1.0) for i in range(10)], 0.3) == 1.0
    rng = np.random.default_rng(7)
    mu = rng.normal(0, 5, 10000)
    sd = rng.uniform(0.5, 2, 10000)
    y = rng.normal(mu, sd)
    recs = [reg_record(i, m, s, t) for i, (m, s, t) in enumerate(zip(mu, sd, y))]
    assert abs(cal.interval_coverage(recs, 0.7) - 0.7) < 0.02
    wide = [reg_record(i, m, 2 * s, t) for i, (m, s, t) in enumerate(zip(mu, sd, y))]
    assert cal.interval_coverage(wide, 0.7) > 0.7
    assert cal.regression_calibration_error(recs, [0.5, 0.7, 0.9]) < 0.02
    exact = [reg_record(i, 0.0, 1.0, 0.0) for i in range(3)]
    assert cal.regression_calibration_error(exact, [0.5, 0.7, 0.9]) == pytest.approx((0.5 + 0.3 + 0.1) / 3)
    with pytest.raises(ValidationError):
        cal.regression_calibration_error(exact, [])


def test_sharpness():
    assert cal.sharpness([reg_record(i, 0, 1) for i in range(3)]) == 1
    assert cal.sharpness([reg_record(0, 0, 1), reg_record(1, 0, 3)]) == 2


def _conformal_data(rng, n, k=5):
    logits = rng.normal(0, 1.5, size=(n, k))
    p = cal._softmax(logits)
    y = (rng.random((n, 1)) > p.cumsum(axis=1)).sum(axis=1)
    return p, y


def test_conformal_coverage():
    rng = np.random.default_rng(3)
    p, y = _conformal_data(rng, 1000)
    c = cal.conformal_calibrate([cls_record(i, row, int(t)) for i, (row, t) in enumerate(zip(p, y))], 0.1)
    pt, yt = _conformal_data(rng, 5000)
    hits = [int(t) in cal.conformal_set(c, ClassProbVector(tuple(row))) for row, t in zip(pt, yt)]
    assert np.mean(hits) >= 0.88


def test_conformal_limits():
    recs = [cls_record(i, [0.995, 0.005], 0) for i in range(100)]
    c = cal.conformal_calibrate(recs, 0.1)
    assert cal.conformal_set(c, ClassProbVector((0.995, 0.005))) == {0}
    tiny = cal.conformal_calibrate(recs[:5], 0.01)
    assert cal.conformal_set(tiny, ClassProbVector((0.9, 0.05, 0.05))) == {0, 1, 2}
    with pytest.raises(ValidationError):
        cal.conformal_calibrate(recs, 0.0)
