"""Monte Carlo estimation of false alarm, delay and misidentification metrics.

The engine simulates paths in fixed chunks, vectorizing observation
generation and log-likelihood-ratio evaluation per chunk while the compiled
kernels advance the statistic recursions path by path.  Every path owns a
dedicated random stream derived from the base seed, the scenario, and the
path index, so estimates are bit-for-bit reproducible regardless of worker
count or scheduling.  All accumulators are integer-valued (counts and sums
of integer stopping times), which makes the aggregation order irrelevant as
well.

Grid estimators share paths across the whole threshold grid: statistic paths
do not depend on thresholds, so one simulated path yields a stopping time
for every grid point, which both avoids quadratic waste and gives common
random numbers across thresholds and across procedure variants.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .models import ChangeModel, llr_matrix
from .procedures import (
    FULL_GENERALIZED_WARN_HORIZON,
    GENERALIZED,
    GENERALIZED_FULL,
    MIN_CUSUM,
    ProcedureSpec,
    Scenario,
)
from .statistics import ADAPTIVE, MATRIX, DataError

__all__ = [
    "MCConfig",
    "EstimateTable",
    "RunBatch",
    "MisidEstimate",
    "rng_stream",
    "run_batch",
    "estimate_arl_false_alarm",
    "estimate_delay_at_zero",
    "estimate_misid",
    "single_cusum_arl",
    "single_cusum_delay",
]

_CHUNK = 512
_BLOCK_SCHEDULE = (256, 1024, 2048)
_LOW_POWER_COUNT = 100

#: Variants whose worst-case (Lorden) delay equals the expected delay with the
#: change at time zero, so the zero-change-point estimate is the exact target
#: rather than a proxy.
LORDEN_EXACT_VARIANTS = (MIN_CUSUM, MATRIX, ADAPTIVE)


@dataclass(frozen=True)
class MCConfig:
    """Simulation budget and reproducibility settings.

    ``arl_paths`` defaults to one tenth of ``num_paths``, matching the
    protocol of estimating expected times to false alarm from a smaller path
    budget than post-change quantities.
    """

    base_seed: int
    num_paths: int = 50_000
    horizon: int = 100_000
    workers: int = 1
    arl_paths: Optional[int] = None

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.base_seed < 0:
            raise ValueError("base_seed must be a non-negative integer")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.arl_paths is not None and self.arl_paths < 1:
            raise ValueError("arl_paths must be positive")

    @property
    def effective_arl_paths(self) -> int:
        return self.arl_paths if self.arl_paths is not None else max(1, self.num_paths // 10)


@dataclass
class EstimateTable:
    """Grid of estimates: one mean, standard error, censored count and path
    count per threshold pair.  Arrays are indexed [b_index, h_index]."""

    metric: str
    b_values: np.ndarray
    h_values: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    censored: np.ndarray
    num_paths: int

    @property
    def unreliable(self) -> np.ndarray:
        """True where more than half the paths were censored."""
        return self.censored > 0.5 * self.num_paths

    def at(self, b: float, h: float = 0.0) -> tuple[float, float, int]:
        bi = int(np.argmin(np.abs(self.b_values - b)))
        hi = int(np.argmin(np.abs(self.h_values - h)))
        return float(self.mean[bi, hi]), float(self.se[bi, hi]), int(self.censored[bi, hi])

    def to_rows(self):
        """Tidy (b, h, metric, estimate, se, censored, n) rows."""
        for bi, b in enumerate(self.b_values):
            for hi, h in enumerate(self.h_values):
                yield (
                    float(b),
                    float(h),
                    self.metric,
                    float(self.mean[bi, hi]),
                    float(self.se[bi, hi]),
                    int(self.censored[bi, hi]),
                    self.num_paths,
                )

    def write_csv(self, path) -> None:
        import csv
        from pathlib import Path

        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["b", "h", "metric", "estimate", "se", "censored", "n"])
            writer.writerows(self.to_rows())

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "b_values": self.b_values.tolist(),
            "h_values": self.h_values.tolist(),
            "estimate": self.mean.tolist(),
            "se": self.se.tolist(),
            "censored": self.censored.tolist(),
            "n": self.num_paths,
        }


@dataclass
class RunBatch:
    """Outcomes of a batch of independent runs at fixed thresholds.

    ``decisions`` holds 1-based alternative indices, 0 where the run was
    censored at the horizon.
    """

    stopping_times: np.ndarray
    decisions: np.ndarray
    censored: np.ndarray

    def mean_stopping_time(self) -> tuple[float, float]:
        """Mean and standard error of min(T, horizon); censored runs make
        this a conservative lower bound on the true expectation."""
        t = self.stopping_times.astype(np.float64)
        n = t.size
        m = float(t.mean())
        se = float(t.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return m, se


@dataclass
class MisidEstimate:
    """Conditional misidentification estimate at one change point."""

    probability: float
    se: float
    retained: int
    censored: int
    false_alarms: int
    low_power: bool
    mean_conditional_delay: float
    delay_se: float


def rng_stream(base_seed: int, path_index: int, domain: tuple = (0, 0, 0)) -> np.random.Generator:
    """Reproducible random stream for one simulated path.

    Streams are derived from (seed, scenario domain, path index) alone, so a
    path's observations never depend on worker assignment or chunk layout.
    """
    words = (int(base_seed), *map(int, domain), int(path_index))
    return np.random.default_rng(np.random.SeedSequence(words))


def _scenario_domain(scenario: Scenario) -> tuple:
    if scenario.nu is None:
        return (0, 0, 0)
    return (1, scenario.j, scenario.nu)


class _PathSource:
    """Draws observation blocks for one path of one scenario."""

    def __init__(self, model: ChangeModel, scenario: Scenario, rng: np.random.Generator):
        self.pre = model.f
        self.post = model.alternatives[scenario.j - 1] if scenario.j is not None else None
        self.nu = np.inf if scenario.nu is None else scenario.nu
        self.rng = rng

    def draw(self, n0: int, m: int) -> np.ndarray:
        """Observations for time steps n0+1 .. n0+m."""
        if n0 + m <= self.nu:
            return self.pre.sampler(self.rng, m)
        if n0 >= self.nu:
            return self.post.sampler(self.rng, m)
        k = int(self.nu) - n0
        return np.vstack([self.pre.sampler(self.rng, k), self.post.sampler(self.rng, m - k)])


def _grid_spacing(values: np.ndarray, name: str) -> float:
    if values.size == 0:
        raise ValueError(f"{name} grid is empty")
    if values.size == 1:
        return 1.0
    steps = np.diff(values)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or steps[0] <= 0:
        raise ValueError(f"{name} grid must be uniformly spaced and ascending")
    return float(steps[0])


def _variant_setup(variant: str, window, horizon: int, num_alternatives: int):
    """Kernel code, effective window and per-path ring length for a variant."""
    if variant not in _kernels.VARIANT_CODES:
        raise ValueError(f"unknown procedure variant {variant!r}")
    code = _kernels.VARIANT_CODES[variant]
    if variant == GENERALIZED:
        if window is None or window < 1:
            raise ValueError("the window-limited generalized variant needs window >= 1")
        eff_window = int(window)
    elif variant == GENERALIZED_FULL:
        if horizon > FULL_GENERALIZED_WARN_HORIZON:
            import warnings

            warnings.warn(
                "the unwindowed generalized statistic costs O(n) per step; "
                f"horizon {horizon} will be slow",
                stacklevel=4,
            )
        eff_window = int(horizon)
    else:
        eff_window = 1
    return code, eff_window


def _chunk_ranges(num_paths: int, chunk: int):
    for start in range(0, num_paths, chunk):
        yield start, min(start + chunk, num_paths)


class _ChunkRunner:
    """Shared machinery: drives one chunk of paths through the kernels."""

    def __init__(self, model, scenario, mc, columns, code, window):
        self.model = model
        self.scenario = scenario
        self.mc = mc
        self.columns = columns
        self.code = code
        self.window = window
        self.K = len(columns) if columns is not None else model.num_alternatives
        # The unwindowed variant keeps all history per path; cap the chunk so
        # ring buffers stay within a reasonable memory budget.
        self.chunk = _CHUNK if window <= 4096 else max(8, (4096 * _CHUNK) // window)

    def _llr_block(self, obs: np.ndarray) -> np.ndarray:
        nact, m, d = obs.shape
        llr = llr_matrix(self.model, obs.reshape(nact * m, d))
        if self.columns is not None:
            llr = llr[:, self.columns]
        return np.ascontiguousarray(llr.reshape(nact, m, self.K))

    def run(self, start: int, stop: int, kernel_call):
        """Advance paths [start, stop); ``kernel_call(llr3, act_rows, state)``
        applies one block.  Returns the final state dict."""
        A = stop - start
        domain = _scenario_domain(self.scenario)
        sources = [
            _PathSource(self.model, self.scenario, rng_stream(self.mc.base_seed, idx, domain))
            for idx in range(start, stop)
        ]
        state = {
            "Y": np.zeros((A, self.K)),
            "P": np.zeros((A, self.K, self.K)),
            "zsum": np.zeros((A, self.K)),
            "zring": np.zeros((A, self.window + 1 if self.code == 4 else 1, self.K)),
            "ncur": np.zeros(A, dtype=np.int64),
            "active": np.ones(A, dtype=np.uint8),
        }
        n0 = 0
        block_idx = 0
        while n0 < self.mc.horizon and state["active"].any():
            size = _BLOCK_SCHEDULE[min(block_idx, len(_BLOCK_SCHEDULE) - 1)]
            block_idx += 1
            m = min(size, self.mc.horizon - n0)
            act = np.flatnonzero(state["active"]).astype(np.int64)
            obs = np.empty((act.size, m, self.model.dim))
            for r, a in enumerate(act):
                obs[r] = sources[a].draw(n0, m)
            llr3 = self._llr_block(obs)
            if not np.all(np.isfinite(llr3)):
                raise DataError("non-finite log-likelihood ratio in simulated block")
            kernel_call(llr3, act, state)
            n0 += m
        return state


def _fixed_chunk(runner: _ChunkRunner, start: int, stop: int, b: float, h: float):
    A = stop - start
    T = np.zeros(A, dtype=np.int64)
    DEC = np.full(A, -1, dtype=np.int64)

    def call(llr3, act, state):
        _kernels.advance_fixed(
            llr3, act, state["Y"], state["P"], state["zsum"], state["zring"],
            state["ncur"], state["active"], T, DEC,
            runner.code, runner.window, b, h, runner.mc.horizon,
        )

    runner.run(start, stop, call)
    return T, DEC


def _grid_chunk(runner: _ChunkRunner, start: int, stop: int, b_values, h_values, db, dh):
    A = stop - start
    nb, nh = b_values.size, h_values.size
    cov = np.zeros((A, nh), dtype=np.int32)
    acc = [np.zeros((nh, nb + 1), dtype=np.int64) for _ in range(6)]

    def call(llr3, act, state):
        _kernels.advance_grid(
            llr3, act, state["Y"], state["P"], state["zsum"], state["zring"],
            state["ncur"], state["active"], cov, *acc,
            runner.code, runner.window,
            float(b_values[0]), db, nb, float(h_values[0]), dh, nh,
            runner.mc.horizon,
        )

    runner.run(start, stop, call)
    return acc


def _map_chunks(mc: MCConfig, num_paths: int, chunk: int, work):
    """Run ``work(start, stop)`` over all chunks, honoring the worker hint;
    results are returned in chunk order."""
    ranges = list(_chunk_ranges(num_paths, chunk))
    if mc.workers == 1 or len(ranges) == 1:
        return [work(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=mc.workers) as pool:
        futures = [pool.submit(work, a, b) for a, b in ranges]
        return [f.result() for f in futures]


def run_batch(
    spec: ProcedureSpec,
    model: ChangeModel,
    scenario: Scenario,
    mc: MCConfig,
    num_paths: Optional[int] = None,
) -> RunBatch:
    """Simulate independent runs of one procedure at fixed thresholds."""
    if spec.num_alternatives != model.num_alternatives:
        raise ValueError("procedure and model disagree on the number of alternatives")
    n = mc.num_paths if num_paths is None else num_paths
    code, window = _variant_setup(spec.variant, spec.window, mc.horizon, model.num_alternatives)
    runner = _ChunkRunner(model, scenario, mc, None, code, window)

    parts = _map_chunks(mc, n, runner.chunk, lambda a, b: _fixed_chunk(runner, a, b, spec.b, spec.h))
    T = np.concatenate([p[0] for p in parts])
    DEC = np.concatenate([p[1] for p in parts])
    censored = DEC < 0
    decisions = np.where(censored, 0, DEC + 1)
    return RunBatch(T, decisions, censored)


def _assemble_table(metric, b_values, h_values, acc_list, num_paths) -> EstimateTable:
    total = [np.zeros_like(acc_list[0][0]) for _ in range(6)]
    for acc in acc_list:
        for t, a in zip(total, acc):
            t += a
    cells = [np.cumsum(t, axis=1)[:, :-1] for t in total]  # (H, B) each
    stop_cnt, stop_sum, stop_sq, cens_cnt, cens_sum, cens_sq = cells
    cnt = stop_cnt + cens_cnt
    if not np.all(cnt == num_paths):
        raise AssertionError("grid accumulator bookkeeping lost paths")
    s1 = (stop_sum + cens_sum).astype(np.float64)
    s2 = (stop_sq + cens_sq).astype(np.float64)
    mean = s1 / num_paths
    if num_paths > 1:
        var = np.maximum(s2 - num_paths * mean**2, 0.0) / (num_paths - 1)
        se = np.sqrt(var / num_paths)
    else:
        se = np.zeros_like(mean)
    return EstimateTable(
        metric=metric,
        b_values=b_values,
        h_values=h_values,
        mean=mean.T.copy(),
        se=se.T.copy(),
        censored=cens_cnt.T.astype(np.int64).copy(),
        num_paths=num_paths,
    )


def _grid_estimate(metric, variant, model, scenario, b_grid, h_grid, mc, num_paths, window, columns):
    b_values = np.asarray(b_grid, dtype=np.float64)
    h_values = np.asarray(h_grid, dtype=np.float64)
    db = _grid_spacing(b_values, "b")
    dh = _grid_spacing(h_values, "h")
    code, eff_window = _variant_setup(variant, window, mc.horizon, model.num_alternatives)
    runner = _ChunkRunner(model, scenario, mc, columns, code, eff_window)
    parts = _map_chunks(
        mc, num_paths, runner.chunk,
        lambda a, b: _grid_chunk(runner, a, b, b_values, h_values, db, dh),
    )
    return _assemble_table(metric, b_values, h_values, parts, num_paths)


def estimate_arl_false_alarm(
    variant: str,
    model: ChangeModel,
    b_grid,
    h_grid,
    mc: MCConfig,
    window: Optional[int] = None,
) -> EstimateTable:
    """Expected time to false alarm over a threshold grid, from paths with no
    change.  Censored paths contribute the horizon, making every entry a
    conservative lower bound; entries with a censored majority are flagged
    through :attr:`EstimateTable.unreliable`."""
    return _grid_estimate(
        "arl_false_alarm", variant, model, Scenario(nu=None), b_grid, h_grid,
        mc, mc.effective_arl_paths, window, None,
    )


def estimate_delay_at_zero(
    variant: str,
    model: ChangeModel,
    i: int,
    b_grid,
    h_grid,
    mc: MCConfig,
    window: Optional[int] = None,
) -> EstimateTable:
    """Expected stopping time with the change active from the start and all
    statistics at zero.  For the min-CuSum, the pairwise CuSum matrix and its
    adaptive modification this equals the worst-case (Lorden) delay; for the
    other variants it is only the zero-change-point delay, and the metric
    name says so."""
    metric = "lorden_delay" if variant in LORDEN_EXACT_VARIANTS else "delay_at_zero_proxy"
    return _grid_estimate(
        f"{metric}[{i}]", variant, model, Scenario(nu=0, j=i), b_grid, h_grid,
        mc, mc.num_paths, window, None,
    )


def estimate_misid(
    spec: ProcedureSpec,
    model: ChangeModel,
    nu: int,
    j: int,
    mc: MCConfig,
    num_paths: Optional[int] = None,
) -> MisidEstimate:
    """Conditional probability of declaring the wrong alternative, given the
    procedure stopped after the change.  Paths that stop at or before the
    change (false alarms) and censored paths are excluded from conditioning."""
    if not 1 <= j <= model.num_alternatives:
        raise ValueError(f"true alternative index {j} outside 1..{model.num_alternatives}")
    if nu < 0:
        raise ValueError("change time must be non-negative")
    batch = run_batch(spec, model, Scenario(nu=nu, j=j), mc, num_paths)
    ok = (~batch.censored) & (batch.stopping_times > nu)
    retained = int(ok.sum())
    wrong = int((batch.decisions[ok] != j).sum())
    if retained > 0:
        p = wrong / retained
        se = float(np.sqrt(p * (1.0 - p) / retained))
        delays = (batch.stopping_times[ok] - nu).astype(np.float64)
        d_mean = float(delays.mean())
        d_se = float(delays.std(ddof=1) / np.sqrt(retained)) if retained > 1 else 0.0
    else:
        p, se, d_mean, d_se = float("nan"), float("nan"), float("nan"), float("nan")
    return MisidEstimate(
        probability=p,
        se=se,
        retained=retained,
        censored=int(batch.censored.sum()),
        false_alarms=int(((~batch.censored) & (batch.stopping_times <= nu)).sum()),
        low_power=retained < _LOW_POWER_COUNT,
        mean_conditional_delay=d_mean,
        delay_se=d_se,
    )


def single_cusum_arl(model: ChangeModel, i: int, b_grid, mc: MCConfig) -> EstimateTable:
    """Expected time to false alarm of the single CuSum watching alternative
    ``i`` alone, over a detection-threshold grid (no isolation condition)."""
    if not 1 <= i <= model.num_alternatives:
        raise ValueError(f"alternative index {i} outside 1..{model.num_alternatives}")
    return _grid_estimate(
        f"single_cusum_arl[{i}]", MIN_CUSUM, model, Scenario(nu=None),
        b_grid, np.array([0.0]), mc, mc.effective_arl_paths, None, np.array([i - 1]),
    )


def single_cusum_delay(model: ChangeModel, i: int, b: float, mc: MCConfig) -> tuple[float, float, int]:
    """Mean stopping time of the single CuSum for alternative ``i`` at
    threshold ``b`` with the change active from the start: the optimal
    benchmark delay.  Returns (mean, standard error, censored count)."""
    if not 1 <= i <= model.num_alternatives:
        raise ValueError(f"alternative index {i} outside 1..{model.num_alternatives}")
    code, window = _variant_setup(MIN_CUSUM, None, mc.horizon, 1)
    runner = _ChunkRunner(model, Scenario(nu=0, j=i), mc, np.array([i - 1]), code, window)
    parts = _map_chunks(
        mc, mc.num_paths, runner.chunk, lambda a, c: _fixed_chunk(runner, a, c, b, 0.0)
    )
    T = np.concatenate([p[0] for p in parts])
    DEC = np.concatenate([p[1] for p in parts])
    t = T.astype(np.float64)
    mean = float(t.mean())
    se = float(t.std(ddof=1) / np.sqrt(t.size)) if t.size > 1 else 0.0
    return mean, se, int((DEC < 0).sum())
