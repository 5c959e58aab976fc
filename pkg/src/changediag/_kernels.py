"""Compiled inner loops for the Monte Carlo engine.

Each kernel advances a chunk of simulated paths through a block of
log-likelihood-ratio values, maintaining exactly the same statistic
recursions as :mod:`changediag.statistics` (equivalence is enforced by the
test suite).  Paths inside a chunk run in lockstep; a path drops out of the
loop the moment it stops, retires, or hits the horizon, so state arrays are
only ever touched by their owning path.

Variant codes::

    0  min-CuSum             (isolation statistic unused)
    1  pairwise CuSum matrix
    2  adaptively reset pairwise CuSum matrix
    3  CuSum differences     (isolation statistic may be negative)
    4  window-limited generalized (the unwindowed form passes window=horizon)

The grid kernel accumulates, for every threshold pair on a uniform grid, the
count, sum and sum of squares of stopping times across paths, using
difference arrays along the detection-threshold axis so that each coverage
event costs O(1).  Coverage exploits two monotonicity facts: the set of
threshold pairs already crossed only grows along a path, and its boundary is
a staircase (raising the isolation level can only shrink the crossed set).
"""

from __future__ import annotations

import numpy as np
from numba import njit

VARIANT_CODES = {
    "min_cusum": 0,
    "matrix": 1,
    "adaptive": 2,
    "vector": 3,
    "generalized": 4,
    "generalized_full": 4,
}


@njit(cache=True, nogil=True, inline="always")
def _advance_one(llr_row, a, Y, P, zsum, zring, n, variant, window, W):
    """One statistic-bank step for path row ``a``; fills W with the
    per-alternative isolation values at the new time ``n``."""
    K = Y.shape[1]
    for i in range(K):
        v = Y[a, i] + llr_row[i]
        Y[a, i] = v if v > 0.0 else 0.0

    if variant == 1 or variant == 2:
        for i in range(K):
            for j in range(K):
                if i != j:
                    v = P[a, i, j] + (llr_row[i] - llr_row[j])
                    P[a, i, j] = v if v > 0.0 else 0.0
        if variant == 2:
            for i in range(K):
                if Y[a, i] == 0.0:
                    for j in range(K):
                        P[a, i, j] = 0.0
        for i in range(K):
            w = np.inf
            for j in range(K):
                if i != j and P[a, i, j] < w:
                    w = P[a, i, j]
            W[i] = w
    elif variant == 3:
        for i in range(K):
            m = -np.inf
            for j in range(K):
                if i != j and Y[a, j] > m:
                    m = Y[a, j]
            W[i] = Y[a, i] - m if K > 1 else np.inf
    elif variant == 4:
        span = window + 1
        for i in range(K):
            zsum[a, i] += llr_row[i]
        zring[a, n % span] = zsum[a]
        count = span if n + 1 > span else n + 1
        for i in range(K):
            W[i] = -np.inf
        for e in range(count):
            # partial sums from one candidate change point to now
            top = -np.inf
            second = -np.inf
            argtop = -1
            for k in range(K):
                d = zsum[a, k] - zring[a, e, k]
                if d > top:
                    second = top
                    top = d
                    argtop = k
                elif d > second:
                    second = d
            for i in range(K):
                d = zsum[a, i] - zring[a, e, i]
                if K > 1:
                    rival = second if i == argtop else top
                    val = d - rival
                    if d < val:
                        val = d
                else:
                    val = d
                if val > W[i]:
                    W[i] = val


@njit(cache=True, nogil=True)
def advance_fixed(
    llr3,
    act_rows,
    Y,
    P,
    zsum,
    zring,
    ncur,
    active,
    T,
    DEC,
    variant,
    window,
    b,
    h,
    horizon,
):
    """Advance paths under fixed thresholds; record stopping time and
    0-based decision (-1 while running / when censored)."""
    K = Y.shape[1]
    m = llr3.shape[1]
    W = np.empty(K)
    for r in range(act_rows.shape[0]):
        a = act_rows[r]
        if active[a] == 0:
            continue
        for s in range(m):
            n = ncur[a] + 1
            _advance_one(llr3[r, s], a, Y, P, zsum, zring, n, variant, window, W)
            ncur[a] = n
            stop = -1
            if variant == 0:
                best = Y[a, 0]
                arg = 0
                for i in range(1, K):
                    if Y[a, i] > best:
                        best = Y[a, i]
                        arg = i
                if best >= b:
                    stop = arg
            else:
                for i in range(K):
                    if Y[a, i] >= b and W[i] >= h:
                        stop = i
                        break
            if stop >= 0:
                T[a] = n
                DEC[a] = stop
                active[a] = 0
                break
            if n >= horizon:
                T[a] = horizon
                DEC[a] = -1
                active[a] = 0
                break


@njit(cache=True, nogil=True, inline="always")
def _grid_count(x, x0, dx, size):
    """Number of grid values x0, x0+dx, ... (size of them) that are <= x."""
    if x >= x0 + dx * (size - 1):
        return size
    q = (x - x0) / dx + 1e-9
    if q < 0.0:
        return 0
    return int(np.floor(q)) + 1


@njit(cache=True, nogil=True)
def advance_grid(
    llr3,
    act_rows,
    Y,
    P,
    zsum,
    zring,
    ncur,
    active,
    cov,
    stop_cnt,
    stop_sum,
    stop_sq,
    cens_cnt,
    cens_sum,
    cens_sq,
    variant,
    window,
    b0,
    db,
    nb,
    h0,
    dh,
    nh,
    horizon,
):
    """Advance paths and accumulate stopping-time moments for a whole
    uniform threshold grid (difference arrays along the detection axis)."""
    K = Y.shape[1]
    m = llr3.shape[1]
    W = np.empty(K)
    for r in range(act_rows.shape[0]):
        a = act_rows[r]
        if active[a] == 0:
            continue
        for s in range(m):
            n = ncur[a] + 1
            _advance_one(llr3[r, s], a, Y, P, zsum, zring, n, variant, window, W)
            ncur[a] = n
            for i in range(K):
                hm = nh if variant == 0 else _grid_count(W[i], h0, dh, nh)
                if hm == 0:
                    continue
                bc = _grid_count(Y[a, i], b0, db, nb)
                if bc <= cov[a, hm - 1]:
                    continue
                row = hm - 1
                while row >= 0 and cov[a, row] < bc:
                    lo = cov[a, row]
                    stop_cnt[row, lo] += 1
                    stop_cnt[row, bc] -= 1
                    stop_sum[row, lo] += n
                    stop_sum[row, bc] -= n
                    stop_sq[row, lo] += n * n
                    stop_sq[row, bc] -= n * n
                    cov[a, row] = bc
                    row -= 1
            if cov[a, nh - 1] == nb:
                active[a] = 0
                break
            if n >= horizon:
                for row in range(nh):
                    lo = cov[a, row]
                    if lo < nb:
                        cens_cnt[row, lo] += 1
                        cens_cnt[row, nb] -= 1
                        cens_sum[row, lo] += n
                        cens_sum[row, nb] -= n
                        cens_sq[row, lo] += n * n
                        cens_sq[row, nb] -= n * n
                active[a] = 0
                break
