# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics mirror ``_pykernels`` exactly."""
import numpy as np

from libc.math cimport fabs, log, NAN


def dd_series(const double[::1] x, Py_ssize_t h):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t j, k, t, nz
    cdef double acc, s_cur, s_prev
    out = np.full(n, np.nan)
    cdef double[::1] o = out
    if h < 1 or n < 2 * h:
        return out
    # sums[j] = sum |x[j:j+h]|, slid in O(1) and re-summed exactly every h steps to bound drift
    sums_arr = np.empty(n - h + 1)
    cdef double[::1] sums = sums_arr
    nz = 0
    acc = 0.0
    for j in range(n - h + 1):
        if j % h == 0:
            acc = 0.0
            nz = 0
            for k in range(j, j + h):
                acc += fabs(x[k])
                nz += x[k] != 0.0
        else:
            acc += fabs(x[j + h - 1]) - fabs(x[j - 1])
            nz += (x[j + h - 1] != 0.0) - (x[j - 1] != 0.0)
        # an all-zero window is exactly zero regardless of round-off in acc
        sums[j] = acc if nz > 0 else 0.0
    for t in range(2 * h - 1, n):
        s_cur = sums[t - h + 1]
        s_prev = sums[t - 2 * h + 1]
        if s_cur == 0.0:
            o[t] = 0.0
        else:
            o[t] = (s_cur - s_prev) / s_cur
    return out


def threshold_crossings(const double[::1] dd, double beta, Py_ssize_t holdoff):
    cdef Py_ssize_t n = dd.shape[0]
    cdef Py_ssize_t i = 0
    cdef list hits = []
    if holdoff < 1:
        holdoff = 1
    while i < n:
        # NaN compares false, so the invalid prefix never triggers
        if dd[i] >= beta:
            hits.append(i)
            i += holdoff
        else:
            i += 1
    return np.asarray(hits, dtype=np.int64)


def sample_entropy(const double[::1] x, Py_ssize_t m, double r):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t n_t = n - m
    cdef Py_ssize_t i, j, k
    cdef long long b = 0
    cdef long long a = 0
    cdef bint ok
    if m < 1 or n_t < 2:
        return NAN
    for i in range(n_t - 1):
        for j in range(i + 1, n_t):
            ok = True
            for k in range(m):
                if fabs(x[i + k] - x[j + k]) > r:
                    ok = False
                    break
            if ok:
                b += 1
                if fabs(x[i + m] - x[j + m]) <= r:
                    a += 1
    if a == 0 or b == 0:
        return NAN
    return -log(<double>a / <double>b)


cdef inline double _trap(double y, double a, double b, double c, double d) nogil:
    if y < a or y > d:
        return 0.0
    if y >= b and y <= c:
        return 1.0
    if y < b:
        return (y - a) / (b - a)
    return (d - y) / (d - c)


def mamdani_centroid(const double[:, ::1] strength, const double[:, ::1] params, Py_ssize_t n_grid):
    cdef Py_ssize_t n = strength.shape[0]
    cdef Py_ssize_t n_lab = strength.shape[1]
    cdef Py_ssize_t i, g, l
    cdef double num, den, mu, v, y, step
    scores = np.empty(n)
    fired = np.empty(n, dtype=bool)
    cdef double[::1] sc = scores
    cdef unsigned char[::1] fi = fired.view(np.uint8)
    grid = np.linspace(0.0, 1.0, n_grid)
    member = np.empty((n_lab, n_grid))
    cdef double[::1] gr = grid
    cdef double[:, ::1] mem = member
    for l in range(n_lab):
        for g in range(n_grid):
            mem[l, g] = _trap(gr[g], params[l, 0], params[l, 1], params[l, 2], params[l, 3])
    for i in range(n):
        num = 0.0
        den = 0.0
        for g in range(n_grid):
            mu = 0.0
            for l in range(n_lab):
                v = mem[l, g]
                if strength[i, l] < v:
                    v = strength[i, l]
                if v > mu:
                    mu = v
            num += gr[g] * mu
            den += mu
        if den > 0.0:
            sc[i] = num / den
            fi[i] = 1
        else:
            sc[i] = 0.5
            fi[i] = 0
    return scores, fired
