import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reliakit import monitor as mon
from reliakit.errors import ValidationError
from reliakit.monitor import EventKind, as_stream

from fixtures import cls_record


def ph_oracle(x, delta, lam):
    """Page-Hinkley in closed vectorized form."""
    x = np.asarray(x, dtype=np.float64)
    t = np.arange(1, x.size + 1)
    mean = np.cumsum(x) / t
    m = np.cumsum(x - mean - delta)
    stat = m - np.minimum.accumulate(m)
    hits = np.nonzero(stat > lam)[0]
    return int(hits[0]) if hits.size else None


def test_threshold_monitor():
    assert mon.threshold_monitor(as_stream([0.99, 0.97]), 0.95) == []
    ev = mon.threshold_monitor(as_stream([0.99, 0.90]), 0.95)
    assert [(e.index, e.kind) for e in ev] == [(1, EventKind.THRESHOLD_BREACH)]
    assert mon.threshold_monitor(as_stream([0.95]), 0.95) == []
    assert len(mon.threshold_monitor(as_stream([0.1, 2.0]), 1.0, "above")) == 1
    with pytest.raises(ValidationError):
        mon.ThresholdMonitor(0.5, "sideways")


def test_consecutive_rule():
    assert mon.consecutive_rule(as_stream([0.99, 0.90, 0.90, 0.90]), 0.95, 3) == 3
    assert mon.consecutive_rule(as_stream([0.90, 0.90, 0.99]), 0.95, 3) is None
    assert mon.consecutive_rule(as_stream([0.99] * 5), 0.95, 3) is None
    assert mon.consecutive_rule(as_stream([0.90, 0.90, 0.95, 0.90]), 0.95, 3) is None


def test_consecutive_resets_after_firing():
    ev = mon.ConsecutiveRuleMonitor(0.95, 2).feed(as_stream([0.9] * 5))
    assert [e.index for e in ev] == [1, 3]


def test_zscore():
    rng = np.random.default_rng(0)
    profile = mon.build_profile(rng.normal(size=500))
    assert mon.zscore_monitor(profile, as_stream(rng.normal(size=1000)), 6) == []
    assert mon.zscore_monitor(profile, as_stream([profile.mean]), 0.01) == []
    ev = mon.zscore_monitor(profile, as_stream([profile.mean + 10 * profile.stddev]), 3)
    assert len(ev) == 1 and ev[0].kind is EventKind.ANOMALY
    with pytest.raises(ValidationError):
        mon.build_profile([1.0, 1.0, 1.0])


def test_page_hinkley_basics(backend):
    assert mon.page_hinkley(as_stream([1.0] * 200), 0.05, 5) is None
    rng = np.random.default_rng(1)
    x = np.r_[rng.normal(size=500), rng.normal(size=500) + 2.0]
    assert mon.page_hinkley(as_stream(x), 0.05, math.inf) is None
    with pytest.raises(ValidationError):
        mon.PageHinkleyMonitor(0.05, 0)


def test_page_hinkley_matches_oracle(backend):
    for seed in range(30):
        rng = np.random.default_rng(seed)
        x = np.r_[rng.normal(size=300), rng.normal(size=300) + rng.uniform(0, 3)]
        lam = rng.uniform(5, 60)
        assert mon.page_hinkley(as_stream(x), 0.05, lam) == ph_oracle(x, 0.05, lam)


@pytest.mark.slow
def test_page_hinkley_step_detection(backend):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = np.r_[rng.normal(size=500), rng.normal(size=500) + 2.0]
        alarm = mon.page_hinkley(as_stream(x), 0.05, 50)
        assert alarm is not None and 500 <= alarm <= 650, (seed, alarm)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=120), st.data())
def test_chunking_invariance(values, data):
    stream = as_stream(values)
    cuts = sorted(data.draw(st.lists(st.integers(0, len(values)), max_size=5)))
    chunks = [stream[a:b] for a, b in zip([0, *cuts], [*cuts, len(values)])]
    profile = mon.NominalProfile(0.0, 1.0, 10)
    factories = [
        lambda: mon.ThresholdMonitor(0.5),
        lambda: mon.ConsecutiveRuleMonitor(0.5, 3),
        lambda: mon.ZScoreMonitor(profile, 1.5),
        lambda: mon.PageHinkleyMonitor(0.05, 4.0),
    ]
    for make in factories:
        whole = make().feed(stream)
        m = make()
        pieces = [e for c in chunks for e in m.feed(c)]
        single = make()
        one_by_one = [e for i, v in stream for e in single.update(i, v)]
        assert whole == pieces == one_by_one


def test_out_of_order_rejected():
    m = mon.ThresholdMonitor(0.5)
    m.update(5, 1.0)
    with pytest.raises(ValidationError):
        m.update(5, 1.0)


def test_event_log(tmp_path):
    path = tmp_path / "events.jsonl"
    assert mon.append_event_log(path, []) == 0
    assert not path.exists()
    ev = mon.threshold_monitor(as_stream([0.1, 0.2, 0.9]), 0.5)
    assert mon.append_event_log(path, ev[::-1]) == 2
    assert mon.load_event_log(path) == ev
    mon.append_event_log(path, ev)
    assert mon.load_event_log(path) == ev + ev


def test_make_monitor():
    assert isinstance(mon.make_monitor({"rule": "consecutive", "theta": 0.95, "m": 3}), mon.ConsecutiveRuleMonitor)
    assert isinstance(mon.make_monitor({"rule": "page_hinkley", "lambda": 50}), mon.PageHinkleyMonitor)
    z = mon.make_monitor({"rule": "zscore", "z": 3}, [0.0, 1.0, 2.0])
    assert z.profile.stddev == 1.0
    with pytest.raises(ValidationError):
        mon.make_monitor({"rule": "zscore", "z": 3})
    with pytest.raises(ValidationError):
        mon.make_monitor({"rule": "nope"})


def test_metric_stream_skips_records_awaiting_truth():
    from reliakit.report import metric_stream
    recs = [cls_record(0, [0.9, 0.1], 0), cls_record(1, [0.6, 0.4]), cls_record(2, [0.3, 0.7], 0)]
    assert metric_stream(recs, "zero_one_error") == [(0, 0.0), (2, 1.0)]
    assert [i for i, _ in metric_stream(recs, "max_prob")] == [0, 1, 2]
