"""Numpy fallback for the compiled kernels.

Every function here has the same signature and contract as its counterpart in
``_ckernels.pyx``; tests assert agreement between the two.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def dd_series(x, h):
    x = np.ascontiguousarray(x, dtype=float)
    n = x.shape[0]
    out = np.full(n, np.nan)
    if h < 1 or n < 2 * h:
        return out
    sums = sliding_window_view(np.abs(x), h).sum(axis=1)  # sums[j] = sum |x[j:j+h]|
    s_cur = sums[h:]
    s_prev = sums[:-h]
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.where(s_cur == 0.0, 0.0, (s_cur - s_prev) / s_cur)
    out[2 * h - 1:] = dd
    return out


def threshold_crossings(dd, beta, holdoff):
    dd = np.asarray(dd, dtype=float)
    holdoff = max(int(holdoff), 1)
    with np.errstate(invalid="ignore"):
        cand = np.flatnonzero(dd >= beta)
    hits = []
    next_ok = -1
    for i in cand:
        if i >= next_ok:
            hits.append(i)
            next_ok = i + holdoff
    return np.asarray(hits, dtype=np.int64)


def sample_entropy(x, m, r):
    x = np.asarray(x, dtype=float)
    n_t = x.shape[0] - m
    if m < 1 or n_t < 2:
        return float("nan")
    templ = sliding_window_view(x, m + 1)[:n_t]
    # pairwise Chebyshev distance on the first m points, then the (m+1)-th
    dm = np.max(np.abs(templ[:, None, :m] - templ[None, :, :m]), axis=2)
    last = np.abs(templ[:, None, m] - templ[None, :, m])
    iu = np.triu_indices(n_t, k=1)
    match_m = dm[iu] <= r
    b = int(np.count_nonzero(match_m))
    a = int(np.count_nonzero(match_m & (last[iu] <= r)))
    if a == 0 or b == 0:
        return float("nan")
    return float(-np.log(a / b))


def _trap(y, a, b, c, d):
    mu = np.zeros_like(y)
    core = (y >= b) & (y <= c)
    mu[core] = 1.0
    rise = (y >= a) & (y < b)
    if b > a:
        mu[rise] = (y[rise] - a) / (b - a)
    fall = (y > c) & (y <= d)
    if d > c:
        mu[fall] = (d - y[fall]) / (d - c)
    return mu


def mamdani_centroid(strength, params, n_grid):
    strength = np.asarray(strength, dtype=float)
    params = np.asarray(params, dtype=float)
    grid = np.linspace(0.0, 1.0, n_grid)
    member = np.stack([_trap(grid, *p) for p in params])  # (labels, grid)
    agg = np.max(np.minimum(strength[:, :, None], member[None, :, :]), axis=1)
    den = agg.sum(axis=1)
    num = agg @ grid
    fired = den > 0.0
    scores = np.full(strength.shape[0], 0.5)
    scores[fired] = num[fired] / den[fired]
    return scores, fired
