import pytest

from reliakit.core import DatasetSlice
from reliakit.errors import EmptySliceError, ValidationError
from reliakit.testcase import (
    Aggregator, Direction, Mode, Ordering, TestCase, Verdict, compare_models, run_suite, run_test_case,
)

from fixtures import cls_record, reg_record


def reg(values):
    return [reg_record(i, pred, 1.0, truth) for i, (pred, truth) in enumerate(values)]


def test_mean_score_only():
    out = run_test_case(TestCase("m", "squared_error"), reg([(80.5, 80), (81, 80)]))
    assert out.score == 0.625
    assert out.verdict is Verdict.SCORE_ONLY
    assert out.n == 2


def test_max_aggregator():
    out = run_test_case(TestCase("m", "squared_error", aggregator="max"), reg([(80.5, 80), (20, 80)]))
    assert out.score == 3600


def test_any_failure():
    case = TestCase("f", "squared_error", aggregator="any_failure", mode="per_instance", threshold=1.0)
    out = run_test_case(case, reg([(80.5, 80), (20, 80)]))
    assert out.verdict is Verdict.FAIL
    assert out.score == 1


def test_count_failures_bound():
    data = reg([(0, 0), (5, 0), (6, 0)])
    ok = TestCase("c", "squared_error", aggregator="count_failures", mode="per_instance", threshold=1.0, max_failures=2)
    bad = TestCase("c", "squared_error", aggregator="count_failures", mode="per_instance", threshold=1.0)
    assert run_test_case(ok, data).verdict is Verdict.PASS
    assert run_test_case(bad, data).verdict is Verdict.FAIL
    assert run_test_case(bad, data).score == 2


def test_illegal_combinations():
    with pytest.raises(ValidationError):
        TestCase("x", "squared_error", aggregator="any_failure")
    with pytest.raises(ValidationError):
        TestCase("x", "squared_error", aggregator="mean", mode="per_instance", threshold=1.0)
    with pytest.raises(ValidationError):
        TestCase("x", "squared_error", aggregator="count_failures", mode="per_instance")


def test_empty_slice_is_error():
    case = TestCase("e", "squared_error", slice=DatasetSlice("none", tags_any=frozenset({"zzz"})))
    with pytest.raises(EmptySliceError):
        run_test_case(case, reg([(1, 1)]))


def test_less_is_failure_direction():
    data = [cls_record(i, [0.9, 0.1], 0) for i in range(3)]
    ok = TestCase("p", "max_prob", threshold=0.8, direction="less")
    bad = TestCase("p", "max_prob", threshold=0.95, direction="less")
    assert run_test_case(ok, data).verdict is Verdict.PASS
    assert run_test_case(bad, data).verdict is Verdict.FAIL


def test_suite_deployability():
    data = reg([(80.5, 80), (81, 80)])
    passing = [TestCase("a", "squared_error", threshold=1.0), TestCase("b", "absolute_error", threshold=1.0)]
    assert run_suite(passing, data).deployable
    mixed = [TestCase("a", "squared_error", threshold=0.1), TestCase("o", "absolute_error")]
    rep = run_suite(mixed, data)
    assert not rep.deployable
    assert rep.outcome("o").verdict is Verdict.SCORE_ONLY
    empty = run_suite([], data)
    assert empty.deployable and empty.outcomes == () and empty.warnings


def test_suite_threads_identical():
    data = reg([(i * 0.1, 0) for i in range(50)])
    suite = [TestCase(f"t{i}", "squared_error", threshold=float(i)) for i in range(8)]
    assert run_suite(suite, data, 1) == run_suite(suite, data, 4)


def test_compare_models():
    data = reg([(80.5, 80), (81, 80)])
    good = run_suite([TestCase("s", "squared_error", threshold=10.0), TestCase("o", "absolute_error")], data)
    bad = run_suite([TestCase("s", "squared_error", threshold=0.1), TestCase("o", "absolute_error")], data)
    assert compare_models(good, bad, "o") is Ordering.A
    assert compare_models(bad, good, "o") is Ordering.B
    assert compare_models(good, good, "o") is Ordering.TIE
    low = run_suite([TestCase("o", "absolute_error")], reg([(0.1, 0)]))
    high = run_suite([TestCase("o", "absolute_error")], reg([(0.2, 0)]))
    assert compare_models(low, high, "o") is Ordering.A
    assert compare_models(low, high, "o", Direction.LESS_IS_FAILURE) is Ordering.B


def test_dataset_metric_in_suite():
    data = [cls_record(i, [0.9, 0.1], 0 if i < 9 else 1) for i in range(10)]
    out = run_test_case(TestCase("ece", "ece", params={"n_bins": 2}), data)
    assert out.n == 10
    assert 0 <= out.score <= 1
