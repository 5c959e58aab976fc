"""Sequential change diagnosis procedures built on the statistic bank.

A procedure is a stopping time plus an identification rule.  The family
variants stop at the first step at which some alternative's detection CuSum
meets the detection threshold while its isolation statistic (the row minimum
of the pairwise matrix, or the generalized statistic) meets the isolation
threshold, and declare the smallest qualifying alternative.  The min-CuSum
stops when the largest detection CuSum meets the detection threshold and
declares the argmax, again breaking ties toward the smallest index so that
runs are exactly reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import statistics as st
from .models import ChangeModel, llr_matrix

__all__ = [
    "VARIANTS",
    "FAMILY_VARIANTS",
    "ProcedureSpec",
    "Scenario",
    "RunOutcome",
    "StatisticBank",
    "step",
    "run",
    "pathwise_stop_times",
]

MIN_CUSUM = "min_cusum"
GENERALIZED = "generalized"
GENERALIZED_FULL = "generalized_full"

FAMILY_VARIANTS = (st.MATRIX, st.ADAPTIVE, st.VECTOR, GENERALIZED, GENERALIZED_FULL)
VARIANTS = (MIN_CUSUM,) + FAMILY_VARIANTS

#: Horizon above which running the unwindowed generalized statistic, whose
#: per-step cost grows with the number of collected observations, draws a
#: warning from the evaluation engine.
FULL_GENERALIZED_WARN_HORIZON = 10_000


@dataclass(frozen=True)
class ProcedureSpec:
    """Variant tag plus thresholds; fully determines a diagnosis procedure.

    ``b`` is the detection threshold, ``h`` the isolation threshold (ignored
    by the min-CuSum, whose identification rule is argmax-at-stopping rather
    than first-crossing).  ``window`` is required for the window-limited
    generalized variant.
    """

    variant: str
    b: float
    h: float = 0.0
    num_alternatives: int = 1
    window: Optional[int] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown procedure variant {self.variant!r}")
        if self.b < 0 or self.h < 0:
            raise ValueError("thresholds must be non-negative")
        if self.num_alternatives < 1:
            raise ValueError("need at least one alternative")
        if self.variant == GENERALIZED and (self.window is None or self.window < 1):
            raise ValueError("the window-limited generalized variant needs window >= 1")


@dataclass(frozen=True)
class Scenario:
    """Change time and true post-change alternative; ``nu=None`` means the
    change never occurs."""

    nu: Optional[int]
    j: Optional[int] = None

    def __post_init__(self):
        if self.nu is not None:
            if self.nu < 0:
                raise ValueError("change time must be non-negative")
            if self.j is None:
                raise ValueError("a finite change time needs the true alternative index")


@dataclass(frozen=True)
class RunOutcome:
    """Stopping time, decision and censoring status of one simulated run."""

    stopping_time: int
    decision: Optional[int]     # 1-based, None when censored
    censored: bool
    horizon: int
    stopped_after_change: Optional[bool] = None


class StatisticBank:
    """Mutable per-run state for one procedure variant.

    Owns exactly the statistics the variant needs.  Banks have no interior
    sharing; every Monte Carlo worker builds its own.
    """

    def __init__(self, spec: ProcedureSpec):
        K = spec.num_alternatives
        self.spec = spec
        self.cusums = st.CusumVector.zeros(K)
        self.clock = st.ResetClock.zeros(K)
        self.pairs = None
        self.generalized = None
        self.isolation = np.full(K, np.inf)
        if spec.variant in st.PAIR_VARIANTS:
            self.pairs = st.PairMatrix.zeros(spec.variant, K)
        elif spec.variant in (GENERALIZED, GENERALIZED_FULL):
            window = spec.window if spec.variant == GENERALIZED else st.UNBOUNDED
            self.generalized = st.GeneralizedBuffer.empty(K, window)

    @property
    def n(self) -> int:
        return self.cusums.n

    def advance(self, llrs: np.ndarray) -> None:
        """Feed one observation's log-likelihood ratios to every statistic."""
        st.update_cusum(self.cusums, llrs)
        st.update_reset_clock(self.clock, self.cusums)
        if self.pairs is not None:
            st.update_pair_matrix(self.pairs, self.cusums, st.pair_llrs_from_vector(llrs))
            self.isolation = self.pairs.isolation_values()
        elif self.generalized is not None:
            _, self.isolation = st.update_generalized(self.generalized, llrs)


def step(spec: ProcedureSpec, bank: StatisticBank, x, model: ChangeModel) -> Optional[int]:
    """Feed one observation; return the declared alternative (1-based) if the
    procedure stops at this step, else None."""
    llrs = llr_matrix(model, x)[0]
    bank.advance(llrs)
    return check_rule(spec, bank.cusums.values, bank.isolation)


def check_rule(spec: ProcedureSpec, cusum_values: np.ndarray, isolation_values: np.ndarray) -> Optional[int]:
    """Stopping rule on the current statistic values; None means continue."""
    if not np.all(np.isfinite(cusum_values)):
        raise st.DataError("non-finite detection statistic")
    if spec.variant == MIN_CUSUM:
        if cusum_values.max() >= spec.b:
            return int(np.argmax(cusum_values)) + 1
        return None
    hits = np.flatnonzero((cusum_values >= spec.b) & (isolation_values >= spec.h))
    if hits.size:
        return int(hits[0]) + 1
    return None


def run(
    spec: ProcedureSpec,
    model: ChangeModel,
    scenario: Scenario,
    horizon: int,
    rng: np.random.Generator,
) -> RunOutcome:
    """Simulate one path until the procedure stops or the horizon is reached.

    Observations up to and including the change time come from the pre-change
    density, later ones from the true alternative.  Censored runs are flagged,
    never dropped.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if spec.num_alternatives != model.num_alternatives:
        raise ValueError("procedure and model disagree on the number of alternatives")
    if spec.variant == GENERALIZED_FULL and horizon > FULL_GENERALIZED_WARN_HORIZON:
        warnings.warn(
            "the unwindowed generalized statistic costs O(n) per step; "
            f"horizon {horizon} will be slow",
            stacklevel=2,
        )
    nu = np.inf if scenario.nu is None else scenario.nu
    post = model.alternatives[scenario.j - 1] if scenario.j is not None else None
    bank = StatisticBank(spec)
    for n in range(1, horizon + 1):
        density = model.f if n <= nu else post
        x = density.sampler(rng, 1)
        decision = step(spec, bank, x, model)
        if decision is not None:
            return RunOutcome(n, decision, False, horizon, None if scenario.nu is None else n > scenario.nu)
    return RunOutcome(horizon, None, True, horizon, None if scenario.nu is None else horizon > scenario.nu)


def pathwise_stop_times(cusum_path, isolation_path, b_grid, h_grid):
    """Stopping times and decisions of the family procedure on one simulated
    path, for every threshold pair on a grid.

    ``cusum_path`` and ``isolation_path`` hold the per-step values (rows are
    time steps 1..n, columns alternatives).  Returns integer arrays ``T`` and
    ``D`` of shape (len(b_grid), len(h_grid)); entries are -1 where the path
    never stops.  Exploits that the first crossing of the running maximum of
    the isolation-masked detection statistic is non-decreasing in both
    thresholds, so one pass per alternative and isolation level covers the
    whole detection grid.
    """
    Y = np.asarray(cusum_path, dtype=np.float64)
    W = np.asarray(isolation_path, dtype=np.float64)
    b_grid = np.asarray(b_grid, dtype=np.float64)
    h_grid = np.asarray(h_grid, dtype=np.float64)
    n, K = Y.shape
    tau = np.empty((K, b_grid.size, h_grid.size), dtype=np.int64)
    for i in range(K):
        for hi, h in enumerate(h_grid):
            masked = np.where(W[:, i] >= h, Y[:, i], -np.inf)
            running = np.maximum.accumulate(masked)
            tau[i, :, hi] = np.searchsorted(running, b_grid, side="left") + 1
    T = tau.min(axis=0)
    D = np.asarray(tau.argmin(axis=0) + 1, dtype=np.int64)
    censored = T > n
    T[censored] = -1
    D[censored] = -1
    return T, D
