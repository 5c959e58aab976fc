"""Running detection and isolation statistics, updated one observation at a time.

The bank of statistics consists of the per-alternative CuSum values, one of
three pairwise statistic variants (plain pairwise CuSums, their adaptively
reset modification, or differences of per-alternative CuSums), the reset
clock feeding the adaptive variant, and the window-limited generalized
statistics kept in a ring buffer of cumulative sums.

Update ordering within one time step is fixed: the per-alternative CuSums
advance first, then the reset clock, then the pairwise matrix, because the
adaptive reset reads the already-advanced CuSum value of the current step.

All values are in nats, stored as double precision.  Exact comparison to
0.0 is used to detect a CuSum at zero: the positive-part recursion assigns
the literal value 0.0, so no epsilon is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MATRIX",
    "ADAPTIVE",
    "VECTOR",
    "PAIR_VARIANTS",
    "DataError",
    "CusumVector",
    "PairMatrix",
    "ResetClock",
    "GeneralizedBuffer",
    "UNBOUNDED",
    "pair_llrs_from_vector",
    "update_cusum",
    "update_pair_matrix",
    "update_reset_clock",
    "update_generalized",
    "batch_cusum_oracle",
]

MATRIX = "matrix"
ADAPTIVE = "adaptive"
VECTOR = "vector"
PAIR_VARIANTS = (MATRIX, ADAPTIVE, VECTOR)

#: Window size marker for the full (unwindowed) generalized statistic.
UNBOUNDED = None


class DataError(ValueError):
    """Non-finite input fed to a statistic update."""


@dataclass
class CusumVector:
    """Per-alternative CuSum values Y at the current time index n."""

    values: np.ndarray
    n: int = 0

    @classmethod
    def zeros(cls, num_alternatives: int) -> "CusumVector":
        return cls(np.zeros(num_alternatives), 0)


@dataclass
class PairMatrix:
    """Pairwise isolation statistics, entry (i, j) meaningful for i != j.

    variant "matrix":   CuSum of the pair log-likelihood ratios.
    variant "adaptive": same recursion, zeroed whenever the detection CuSum
                        of the row alternative is at zero.
    variant "vector":   difference of the row and column detection CuSums
                        (recomputed exactly, not accumulated).
    """

    variant: str
    values: np.ndarray

    @classmethod
    def zeros(cls, variant: str, num_alternatives: int) -> "PairMatrix":
        if variant not in PAIR_VARIANTS:
            raise ValueError(f"unknown pair variant {variant!r}")
        return cls(variant, np.zeros((num_alternatives, num_alternatives)))

    def isolation_values(self) -> np.ndarray:
        """Row-wise minimum over rivals; +inf for a single alternative."""
        K = self.values.shape[0]
        if K == 1:
            return np.array([np.inf])
        masked = np.where(np.eye(K, dtype=bool), np.inf, self.values)
        return masked.min(axis=1)


@dataclass
class ResetClock:
    """Most recent time at which each detection CuSum was exactly zero."""

    last_zero: np.ndarray

    @classmethod
    def zeros(cls, num_alternatives: int) -> "ResetClock":
        return cls(np.zeros(num_alternatives, dtype=np.int64))


@dataclass
class GeneralizedBuffer:
    """Ring buffer backing the (window-limited) generalized statistics.

    Stores cumulative per-alternative log-likelihood-ratio sums at the last
    ``window + 1`` time points (all history for the unwindowed variant), from
    which any partial sum inside the window is a difference of two entries.
    The per-step cost is O(window * K); the unwindowed variant costs O(n) per
    step and is flagged accordingly by the evaluation engine.
    """

    window: int | None
    cumsums: list = field(default_factory=list)
    n: int = 0

    @classmethod
    def empty(cls, num_alternatives: int, window: int | None) -> "GeneralizedBuffer":
        if window is not UNBOUNDED and window < 1:
            raise ValueError("generalized window must be a positive integer")
        return cls(window, [np.zeros(num_alternatives)], 0)


def pair_llrs_from_vector(llrs: np.ndarray) -> np.ndarray:
    """Pair log-likelihood ratios from the per-alternative ones.

    The identity log(g_i/g_j) = log(g_i/f) - log(g_j/f) holds exactly, so
    the (i, j) entry is llrs[i] - llrs[j].
    """
    v = np.asarray(llrs, dtype=np.float64)
    return v[:, None] - v[None, :]


def _check_finite(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise DataError("non-finite log-likelihood ratio")
    return a


def update_cusum(state: CusumVector, llrs) -> CusumVector:
    """Advance the detection CuSums by one observation: Y <- (Y + llr)^+."""
    v = _check_finite(llrs)
    np.maximum(state.values + v, 0.0, out=state.values)
    state.n += 1
    return state


def update_reset_clock(clock: ResetClock, cusums: CusumVector, n: int | None = None) -> ResetClock:
    """Record the current time for every CuSum sitting exactly at zero."""
    at = cusums.n if n is None else n
    clock.last_zero[cusums.values == 0.0] = at
    return clock


def update_pair_matrix(state: PairMatrix, cusums: CusumVector, pair_llrs) -> PairMatrix:
    """Advance the pairwise statistics by one observation.

    ``cusums`` must already be advanced to the current step: the adaptive
    variant's reset indicator reads the new CuSum values, not the previous
    ones.
    """
    if state.variant == VECTOR:
        y = cusums.values
        state.values[:] = y[:, None] - y[None, :]
        return state
    p = _check_finite(pair_llrs)
    np.maximum(state.values + p, 0.0, out=state.values)
    if state.variant == ADAPTIVE:
        state.values[cusums.values == 0.0, :] = 0.0
    return state


def update_generalized(buf: GeneralizedBuffer, llrs) -> tuple[GeneralizedBuffer, np.ndarray]:
    """Advance the generalized buffer and return the per-alternative statistics.

    The statistic for alternative i is the maximum, over candidate change
    points t inside the window, of the minimum between the partial sum of its
    own log-likelihood ratios and the smallest partial sum of the pairwise
    ratios against every rival, all summed over t+1..n.  The candidate t = n
    contributes empty sums, i.e. the value 0, so the statistic is never
    negative.  With a single alternative the rival minimum is vacuous (+inf).
    """
    v = _check_finite(llrs)
    buf.cumsums.append(buf.cumsums[-1] + v)
    buf.n += 1
    if buf.window is not UNBOUNDED and len(buf.cumsums) > buf.window + 1:
        del buf.cumsums[0]

    z = np.asarray(buf.cumsums)           # (w+1, K) cumulative sums, oldest first
    own = z[-1] - z                       # partial sums of llr_i over t+1..n
    K = v.shape[0]
    if K == 1:
        w = own.max(axis=0)
    else:
        # min over rivals j of (own_i - own_j) = own_i - max_{j != i} own_j,
        # computed per candidate t from the top-2 values of own.
        order = np.argsort(own, axis=1)
        top1 = order[:, -1]
        rows = np.arange(own.shape[0])
        best = own[rows, top1]
        second = own[rows, order[:, -2]]
        rival_max = np.where(np.arange(K)[None, :] == top1[:, None], second[:, None], best[:, None])
        w = np.minimum(own, own - rival_max).max(axis=0)
    return buf, w


def batch_cusum_oracle(llr_sequence, windows=()) -> dict:
    """Evaluate every statistic path directly from the defining maximizations.

    Test oracle: a double loop over all candidate lower limits, independent of
    the one-step recursions.  Intended for short sequences (length up to about
    1e3).  ``llr_sequence`` has shape (n, K); pair ratios are derived from the
    exact identity.  Returns paths indexed 1..n (row 0 is the all-zero state
    at time 0) for the detection CuSums, the pairwise and adaptively reset
    pairwise CuSums, the reset times, and the window-limited generalized
    statistics for each requested window (``None`` for unwindowed).
    """
    llr = np.asarray(llr_sequence, dtype=np.float64)
    n, K = llr.shape
    cum = np.vstack([np.zeros(K), np.cumsum(llr, axis=0)])  # cum[t] = sum of first t

    def span(i, t, m):
        return cum[m, i] - cum[t, i]

    Y = np.zeros((n + 1, K))
    for m in range(1, n + 1):
        for i in range(K):
            Y[m, i] = max(span(i, t, m) for t in range(0, m + 1))

    reset = np.zeros((n + 1, K), dtype=np.int64)
    for m in range(1, n + 1):
        for i in range(K):
            reset[m, i] = max(t for t in range(0, m + 1) if Y[t, i] == 0.0)

    pair = np.zeros((n + 1, K, K))
    adaptive = np.zeros((n + 1, K, K))
    for m in range(1, n + 1):
        for i in range(K):
            for j in range(K):
                if i == j:
                    continue
                sums = [span(i, t, m) - span(j, t, m) for t in range(0, m + 1)]
                pair[m, i, j] = max(sums)
                adaptive[m, i, j] = max(sums[reset[m, i]:])

    gen = {}
    for win in windows:
        W = np.zeros((n + 1, K))
        for m in range(1, n + 1):
            lo = 0 if win is UNBOUNDED else max(0, m - win)
            for i in range(K):
                vals = []
                for t in range(lo, m + 1):
                    rivals = [span(i, t, m) - span(j, t, m) for j in range(K) if j != i]
                    vals.append(min([span(i, t, m)] + rivals) if rivals else span(i, t, m))
                W[m, i] = max(vals)
        gen[win] = W

    return {"cusum": Y, "pair": pair, "adaptive": adaptive, "reset": reset, "generalized": gen}
