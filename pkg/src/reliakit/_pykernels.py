"""Pure-Python implementations of the hot kernels.

These mirror ``_kernels.pyx`` one-for-one and are used when the compiled
extension is unavailable or ``RELIAKIT_PURE_PYTHON`` is set.
"""
from __future__ import annotations

import math

import numpy as np

_CHUNK_ELEMS = 4_000_000


def page_hinkley_scan(values, delta, lam, n, mean, cum, cum_min):
    """Run the Page-Hinkley recurrence over ``values`` until the first alarm.

    Returns ``(offset, n, mean, cum, cum_min)`` where ``offset`` is the
    position in ``values`` of the alarm or -1 if none fired.
    """
    for pos, x in enumerate(values):
        x = float(x)
        n += 1
        mean += (x - mean) / n
        cum += x - mean - delta
        if cum < cum_min:
            cum_min = cum
        if cum - cum_min > lam:
            return pos, n, mean, cum, cum_min
    return -1, n, mean, cum, cum_min


def kth_neighbor_distance(sample, queries, k):
    sample = np.ascontiguousarray(sample, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    m, d = sample.shape
    out = np.empty(queries.shape[0], dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, m * d))
    for start in range(0, queries.shape[0], step):
        block = queries[start:start + step]
        diff = block[:, None, :] - sample[None, :, :]
        sq = np.einsum("qmd,qmd->qm", diff, diff)
        out[start:start + step] = np.sqrt(np.partition(sq, k - 1, axis=1)[:, k - 1])
    return out


def linear_assignment(cost):
    """Minimum-cost assignment of rows to columns (rows <= columns).

    Shortest augmenting path with dual potentials. Returns ``col_of_row``, an
    integer array giving the assigned column for every row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    a = cost.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            best = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < best:
                        best = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += best
                    v[j] -= best
                else:
                    minv[j] -= best
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row
