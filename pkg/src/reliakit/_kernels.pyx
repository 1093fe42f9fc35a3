# cython: language_level=3
"""Compiled hot kernels. Semantics are identical to ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def page_hinkley_scan(values, double delta, double lam, long n, double mean,
                      double cum, double cum_min):
    cdef const double[::1] xs = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t pos, size = xs.shape[0]
    cdef double x
    for pos in range(size):
        x = xs[pos]
        n += 1
        mean += (x - mean) / n
        cum += x - mean - delta
        if cum < cum_min:
            cum_min = cum
        if cum - cum_min > lam:
            return pos, n, mean, cum, cum_min
    return -1, n, mean, cum, cum_min


cdef double _select(double* buf, Py_ssize_t size, Py_ssize_t kth) noexcept nogil:
    # Hoare quickselect; returns the kth smallest (0-based), buf is reordered.
    cdef Py_ssize_t lo = 0, hi = size - 1, i, j
    cdef double pivot, tmp
    while lo < hi:
        pivot = buf[(lo + hi) // 2]
        i = lo
        j = hi
        while i <= j:
            while buf[i] < pivot:
                i += 1
            while buf[j] > pivot:
                j -= 1
            if i <= j:
                tmp = buf[i]
                buf[i] = buf[j]
                buf[j] = tmp
                i += 1
                j -= 1
        if kth <= j:
            hi = j
        elif kth >= i:
            lo = i
        else:
            break
    return buf[kth]


def kth_neighbor_distance(sample, queries, Py_ssize_t k):
    cdef const double[:, ::1] s = np.ascontiguousarray(sample, dtype=np.float64)
    cdef const double[:, ::1] q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef Py_ssize_t m = s.shape[0], d = s.shape[1], nq = q.shape[0]
    cdef Py_ssize_t a, b, c
    cdef double acc, diff
    out_arr = np.empty(nq, dtype=np.float64)
    buf_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] buf = buf_arr
    with nogil:
        for a in range(nq):
            for b in range(m):
                acc = 0.0
                for c in range(d):
                    diff = q[a, c] - s[b, c]
                    acc += diff * diff
                buf[b] = acc
            out[a] = sqrt(_select(&buf[0], m, k - 1))
    return out_arr


def linear_assignment(cost):
    cdef const double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double best, cur, ui0
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(m + 1)
    p_arr = np.zeros(m + 1, dtype=np.intp)
    way_arr = np.zeros(m + 1, dtype=np.intp)
    minv_arr = np.empty(m + 1)
    used_arr = np.empty(m + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef Py_ssize_t[::1] p = p_arr
    cdef Py_ssize_t[::1] way = way_arr
    cdef double[::1] minv = minv_arr
    cdef unsigned char[::1] used = used_arr
    with nogil:
        for i in range(1, n + 1):
            p[0] = i
            j0 = 0
            for j in range(m + 1):
                minv[j] = INFINITY
                used[j] = 0
            while True:
                used[j0] = 1
                i0 = p[j0]
                ui0 = u[i0]
                best = INFINITY
                j1 = 0
                for j in range(1, m + 1):
                    if not used[j]:
                        cur = a[i0 - 1, j - 1] - ui0 - v[j]
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
