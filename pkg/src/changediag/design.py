"""Threshold design: calibration, feasibility regions, and selection.

The design method fixes a false-alarm tolerance ``alpha`` and a delay
allowance factor ``r > 1``.  Per alternative, the detection threshold of the
oracle single CuSum is calibrated so its expected time to false alarm
reaches ``1/alpha``; its expected delay at that threshold is the benchmark
no better procedure can beat.  A threshold pair (b, h) is feasible when the
procedure's expected time to false alarm is at least ``1/alpha`` and every
per-alternative delay is at most ``r`` times the worst benchmark delay.
Within the feasible region, the operating point takes the largest isolation
threshold available, then the largest detection threshold at that isolation
level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import ChangeModel
from .montecarlo import (
    LORDEN_EXACT_VARIANTS,
    EstimateTable,
    MCConfig,
    estimate_arl_false_alarm,
    estimate_delay_at_zero,
    estimate_misid,
    single_cusum_arl,
    single_cusum_delay,
)
from .procedures import MIN_CUSUM, ProcedureSpec

__all__ = [
    "DesignError",
    "GridExhaustedError",
    "ThresholdGrid",
    "CalibrationResult",
    "CalibrationSummary",
    "RegionMask",
    "SchemeDesign",
    "calibrate_cusum",
    "optimal_lorden",
    "calibrate_all",
    "estimate_region_tables",
    "compute_regions",
    "select_thresholds",
    "design_procedure",
    "misid_optimal_thresholds",
]


class DesignError(RuntimeError):
    """Design-stage failure."""


class GridExhaustedError(DesignError):
    """No grid threshold reached the required expected time to false alarm."""

    def __init__(self, alternative: int, required: float, attained: float):
        self.alternative = alternative
        self.required = required
        self.attained = attained
        super().__init__(
            f"calibration grid exhausted for alternative {alternative}: "
            f"largest attained expected time to false alarm {attained:.2f} < required {required:.2f}"
        )


@dataclass(frozen=True)
class ThresholdGrid:
    """Uniform grids of detection (b) and isolation (h) thresholds."""

    b_start: float = 0.0
    b_step: float = 0.01
    b_stop: float = 7.0
    h_start: float = 0.05
    h_step: float = 0.05
    h_stop: float = 7.0

    def __post_init__(self):
        if self.b_step <= 0 or self.h_step <= 0:
            raise ValueError("grid steps must be positive")
        if self.b_stop < self.b_start or self.h_stop < self.h_start:
            raise ValueError("grid upper limits must not precede the lower limits")

    @staticmethod
    def _values(start: float, step: float, stop: float) -> np.ndarray:
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(n)

    @property
    def b_values(self) -> np.ndarray:
        return self._values(self.b_start, self.b_step, self.b_stop)

    @property
    def h_values(self) -> np.ndarray:
        return self._values(self.h_start, self.h_step, self.h_stop)

    @classmethod
    def default_for(cls, alpha: float, num_alternatives: int) -> "ThresholdGrid":
        """Default upper limits: two nats above the detection threshold that
        already guarantees the false-alarm constraint on its own, so the
        feasible region is strictly inside the grid."""
        cap = abs(math.log(alpha)) + math.log(num_alternatives) + 2.0
        cap = math.ceil(cap * 20) / 20  # align to the coarser (isolation) step
        return cls(b_stop=cap, h_stop=cap)


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated single-CuSum threshold and benchmark delay for one
    alternative."""

    alternative: int
    threshold: float
    arl: float
    arl_se: float
    delay: float
    delay_se: float
    delay_censored: int
    mirrored_from: Optional[int] = None


@dataclass(frozen=True)
class CalibrationSummary:
    """Per-alternative calibration plus the worst benchmark delay."""

    alpha: float
    results: tuple[CalibrationResult, ...]

    @property
    def max_delay(self) -> float:
        return max(r.delay for r in self.results)

    @property
    def max_delay_se(self) -> float:
        # Reported as a caveat on the delay-constraint boundary, not applied
        # as a correction.
        worst = max(self.results, key=lambda r: r.delay)
        return worst.delay_se


@dataclass
class RegionMask:
    """Boolean feasibility masks over the threshold grid, [b_index, h_index].

    ``feasible`` is the pointwise conjunction of the false-alarm mask and
    every per-alternative delay mask.  The underlying estimate tables are
    kept for diagnosis.
    """

    b_values: np.ndarray
    h_values: np.ndarray
    false_alarm: np.ndarray
    delay: list[np.ndarray]
    feasible: np.ndarray
    arl_table: EstimateTable
    delay_tables: list[EstimateTable]
    delay_cap: float
    delay_is_proxy: bool


@dataclass(frozen=True)
class SchemeDesign:
    """Designed operating point of one procedure variant at one (alpha, r)."""

    variant: str
    window: Optional[int]
    alpha: float
    r: float
    selected: Optional[tuple[float, float]]
    region: RegionMask = field(repr=False)
    calibration: CalibrationSummary = field(repr=False)

    @property
    def feasible(self) -> bool:
        return self.selected is not None

    def spec(self, num_alternatives: int) -> ProcedureSpec:
        if self.selected is None:
            raise DesignError("design is infeasible; no operating point to build")
        b, h = self.selected
        return ProcedureSpec(self.variant, b, h, num_alternatives, self.window)


def calibrate_cusum(
    model: ChangeModel,
    i: int,
    alpha: float,
    b_grid,
    mc: MCConfig,
) -> tuple[float, EstimateTable]:
    """Smallest grid threshold whose estimated expected time to false alarm
    reaches 1/alpha, for the single CuSum watching alternative ``i``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    table = single_cusum_arl(model, i, b_grid, mc)
    required = 1.0 / alpha
    qualifying = np.flatnonzero(table.mean[:, 0] >= required)
    if qualifying.size == 0:
        raise GridExhaustedError(i, required, float(table.mean[-1, 0]))
    return float(table.b_values[qualifying[0]]), table


def optimal_lorden(
    model: ChangeModel,
    i: int,
    alpha: float,
    mc: MCConfig,
    threshold: Optional[float] = None,
    b_grid=None,
) -> CalibrationResult:
    """Benchmark delay for alternative ``i``: the expected stopping time of
    its calibrated single CuSum with the change active from the start."""
    if threshold is None:
        if b_grid is None:
            raise ValueError("either a calibrated threshold or a calibration grid is required")
        threshold, table = calibrate_cusum(model, i, alpha, b_grid, mc)
        arl, arl_se, _ = table.at(threshold)
    else:
        table = single_cusum_arl(model, i, np.array([threshold]), mc)
        arl, arl_se, _ = table.at(threshold)
    delay, delay_se, censored = single_cusum_delay(model, i, threshold, mc)
    return CalibrationResult(i, threshold, arl, arl_se, delay, delay_se, censored)


def calibrate_all(
    model: ChangeModel,
    alpha: float,
    b_grid,
    mc: MCConfig,
    mirror_symmetric: bool = False,
) -> CalibrationSummary:
    """Calibrate every alternative; with mirroring on, the second member of a
    declared symmetric pair copies the first instead of being re-simulated."""
    results: list[CalibrationResult] = []
    mirror_target = None
    if mirror_symmetric and model.symmetric_pair is not None:
        mirror_target = model.symmetric_pair[1]
    for i in range(1, model.num_alternatives + 1):
        if mirror_target == i:
            src = results[model.symmetric_pair[0] - 1]
            results.append(
                CalibrationResult(
                    i, src.threshold, src.arl, src.arl_se, src.delay, src.delay_se,
                    src.delay_censored, mirrored_from=src.alternative,
                )
            )
            continue
        threshold, table = calibrate_cusum(model, i, alpha, b_grid, mc)
        arl, arl_se, _ = table.at(threshold)
        delay, delay_se, censored = single_cusum_delay(model, i, threshold, mc)
        results.append(CalibrationResult(i, threshold, arl, arl_se, delay, delay_se, censored))
    return CalibrationSummary(alpha, tuple(results))


def estimate_region_tables(
    variant: str,
    model: ChangeModel,
    grid: ThresholdGrid,
    mc: MCConfig,
    window: Optional[int] = None,
    mirror_symmetric: bool = False,
) -> tuple[EstimateTable, list[EstimateTable]]:
    """Grid estimates feeding the feasibility masks: one no-change table and
    one per-alternative delay table.  These do not depend on the delay
    allowance, so one set serves every ``r``."""
    b_values = grid.b_values
    h_values = np.array([0.0]) if variant == MIN_CUSUM else grid.h_values
    arl_table = estimate_arl_false_alarm(variant, model, b_values, h_values, mc, window)
    mirror_target = None
    if mirror_symmetric and model.symmetric_pair is not None:
        mirror_target = model.symmetric_pair[1]
    delay_tables: list[EstimateTable] = []
    for i in range(1, model.num_alternatives + 1):
        if mirror_target == i:
            delay_tables.append(delay_tables[model.symmetric_pair[0] - 1])
            continue
        delay_tables.append(
            estimate_delay_at_zero(variant, model, i, b_values, h_values, mc, window)
        )
    return arl_table, delay_tables


def compute_regions(
    variant: str,
    model: ChangeModel,
    alpha: float,
    r: float,
    grid: ThresholdGrid,
    mc: MCConfig,
    max_benchmark_delay: float,
    window: Optional[int] = None,
    conservative: bool = False,
    mirror_symmetric: bool = False,
    tables: Optional[tuple[EstimateTable, list[EstimateTable]]] = None,
) -> RegionMask:
    """Feasibility masks over the grid for one procedure variant.

    For variants whose zero-change-point delay is only a proxy for the
    worst-case delay, the masks are built from that proxy and flagged as
    such.  The min-CuSum has no isolation threshold; its grid collapses to a
    single isolation level that is ignored.  Pass precomputed ``tables`` to
    evaluate several allowance factors from one set of simulations.
    """
    if r <= 1.0:
        raise ValueError("the delay allowance factor r must exceed 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if tables is None:
        tables = estimate_region_tables(variant, model, grid, mc, window, mirror_symmetric)
    arl_table, delay_tables = tables

    if conservative:
        false_alarm = (arl_table.mean - 2.0 * arl_table.se) >= 1.0 / alpha
    else:
        false_alarm = arl_table.mean >= 1.0 / alpha

    cap = r * max_benchmark_delay
    delay_masks: list[np.ndarray] = []
    for table in delay_tables:
        if conservative:
            mask = (table.mean + 2.0 * table.se) <= cap
        else:
            mask = table.mean <= cap
        delay_masks.append(mask)

    feasible = false_alarm.copy()
    for mask in delay_masks:
        feasible &= mask
    return RegionMask(
        b_values=arl_table.b_values,
        h_values=arl_table.h_values,
        false_alarm=false_alarm,
        delay=delay_masks,
        feasible=feasible,
        arl_table=arl_table,
        delay_tables=delay_tables,
        delay_cap=cap,
        delay_is_proxy=variant not in LORDEN_EXACT_VARIANTS,
    )


def select_thresholds(region: RegionMask) -> Optional[tuple[float, float]]:
    """Operating point: the largest isolation threshold with any feasible
    detection threshold, then the largest detection threshold at that level.
    None when the feasible region is empty."""
    feasible = region.feasible
    for hi in range(feasible.shape[1] - 1, -1, -1):
        rows = np.flatnonzero(feasible[:, hi])
        if rows.size:
            return float(region.b_values[rows[-1]]), float(region.h_values[hi])
    return None


def design_procedure(
    variant: str,
    model: ChangeModel,
    alpha: float,
    r: float,
    grid: ThresholdGrid,
    mc: MCConfig,
    window: Optional[int] = None,
    calibration: Optional[CalibrationSummary] = None,
    conservative: bool = False,
    mirror_symmetric: bool = False,
    tables: Optional[tuple[EstimateTable, list[EstimateTable]]] = None,
) -> SchemeDesign:
    """Full design pass for one variant: calibrate (unless given), build the
    feasibility region, select the operating point."""
    if calibration is None:
        calibration = calibrate_all(model, alpha, grid.b_values, mc, mirror_symmetric)
    region = compute_regions(
        variant, model, alpha, r, grid, mc, calibration.max_delay,
        window=window, conservative=conservative, mirror_symmetric=mirror_symmetric,
        tables=tables,
    )
    selected = select_thresholds(region)
    return SchemeDesign(variant, window, alpha, r, selected, region, calibration)


def _frontier_candidates(region: RegionMask, max_candidates: int) -> list[tuple[int, int]]:
    """Boundary of the feasible region: per isolation level the largest
    feasible detection index, and per detection level the largest feasible
    isolation index, evenly thinned to the candidate budget.  Interior points
    are dominated in both constraints, so the optimum over the region is
    approximated on this frontier."""
    feasible = region.feasible
    cells: set[tuple[int, int]] = set()
    for hi in range(feasible.shape[1]):
        rows = np.flatnonzero(feasible[:, hi])
        if rows.size:
            cells.add((int(rows[-1]), hi))
    for bi in range(feasible.shape[0]):
        cols = np.flatnonzero(feasible[bi, :])
        if cols.size:
            cells.add((bi, int(cols[-1])))
    ordered = sorted(cells)
    if len(ordered) > max_candidates:
        idx = np.linspace(0, len(ordered) - 1, max_candidates).round().astype(int)
        ordered = [ordered[k] for k in sorted(set(idx.tolist()))]
    return ordered


def misid_optimal_thresholds(
    variant: str,
    model: ChangeModel,
    region: RegionMask,
    nu_grid,
    mc: MCConfig,
    window: Optional[int] = None,
    max_candidates: int = 16,
    mirror_symmetric: bool = False,
):
    """Feasible threshold pair minimizing the worst conditional
    misidentification probability over true alternatives and the change-point
    grid.  Searches the feasible boundary (a documented heuristic; exhaustive
    search over the region is possible but quadratically more expensive).

    Returns the chosen (b, h) and the per-candidate table of worst-case
    estimates.
    """
    candidates = _frontier_candidates(region, max_candidates)
    if not candidates:
        raise DesignError("the feasible region is empty; nothing to optimize")
    mirror_target = None
    if mirror_symmetric and model.symmetric_pair is not None:
        mirror_target = model.symmetric_pair[1]
    rows = []
    best = None
    for bi, hi in candidates:
        b = float(region.b_values[bi])
        h = float(region.h_values[hi])
        spec = ProcedureSpec(variant, b, h, model.num_alternatives, window)
        worst = -np.inf
        worst_se = float("nan")
        low_power = False
        for j in range(1, model.num_alternatives + 1):
            if mirror_target == j:
                continue
            for nu in nu_grid:
                est = estimate_misid(spec, model, int(nu), j, mc)
                low_power = low_power or est.low_power
                if est.retained and est.probability > worst:
                    worst = est.probability
                    worst_se = est.se
        rows.append((b, h, worst, worst_se, low_power))
        if best is None or worst < best[2]:
            best = (b, h, worst)
    return (best[0], best[1]), rows
