import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from reliakit import kernels

BACKENDS = kernels.available_backends()


def test_backend_selection():
    assert kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@pytest.mark.parametrize("name", BACKENDS)
def test_assignment_against_scipy(name):
    impl = kernels.get_backend(name)
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(n, 12))
        cost = rng.uniform(0, 1, (n, m))
        cols = impl.linear_assignment(cost)
        assert len(set(cols.tolist())) == n
        r, c = linear_sum_assignment(cost)
        assert cost[np.arange(n), cols].sum() == pytest.approx(cost[r, c].sum(), abs=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_knn_against_cdist(name):
    impl = kernels.get_backend(name)
    rng = np.random.default_rng(1)
    S, Q = rng.normal(size=(300, 4)), rng.normal(size=(50, 4))
    for k in (1, 5, 300):
        ref = np.sort(cdist(Q, S), axis=1)[:, k - 1]
        assert np.allclose(impl.kth_neighbor_distance(S, Q, k), ref, atol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_page_hinkley_resume(name):
    impl = kernels.get_backend(name)
    x = np.random.default_rng(2).normal(size=400) + np.r_[np.zeros(200), np.full(200, 3.0)]
    full = impl.page_hinkley_scan(x, 0.05, 30.0, 0, 0.0, 0.0, np.inf)
    state = (0, 0.0, 0.0, np.inf)
    offset = 0
    for chunk in np.array_split(x, 7):
        pos, *state = impl.page_hinkley_scan(chunk, 0.05, 30.0, *state)
        if pos >= 0:
            assert offset + pos == full[0]
            break
        offset += chunk.size
    else:
        pytest.fail("no alarm")


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_backends_agree(n, extra, seed):
    rng = np.random.default_rng(seed)
    cost = rng.integers(0, 5, (n, n + extra)).astype(float)  # ties on purpose
    totals = {b: cost[np.arange(n), kernels.get_backend(b).linear_assignment(cost)].sum() for b in BACKENDS}
    assert len(set(totals.values())) == 1
    x = rng.normal(size=50)
    scans = {b: kernels.get_backend(b).page_hinkley_scan(x, 0.1, 3.0, 0, 0.0, 0.0, np.inf) for b in BACKENDS}
    first = scans[BACKENDS[0]]
    assert all(s[0] == first[0] and np.allclose(s[1:], first[1:]) for s in scans.values())
