"""Sequential change diagnosis toolkit.

Implements the CuSum statistic family for joint change detection and fault
isolation (including the adaptively reset pairwise CuSum), Monte Carlo
estimation of false alarm, delay and misidentification performance, and a
threshold-design procedure that trades delay inflation for isolation
reliability.
"""

__version__ = "0.1.0"

from .models import (
    ChangeModel,
    Density,
    KLTable,
    ModelError,
    gaussian_density,
    gaussian_mean_shift,
    kl_table,
    llr_pair,
    llr_vs_f,
    multichannel,
)
from .montecarlo import (
    EstimateTable,
    MCConfig,
    MisidEstimate,
    RunBatch,
    estimate_arl_false_alarm,
    estimate_delay_at_zero,
    estimate_misid,
    rng_stream,
    run_batch,
)
from .procedures import (
    ProcedureSpec,
    RunOutcome,
    Scenario,
    StatisticBank,
    pathwise_stop_times,
    run,
    step,
)
from .design import (
    CalibrationResult,
    CalibrationSummary,
    DesignError,
    GridExhaustedError,
    RegionMask,
    SchemeDesign,
    ThresholdGrid,
    calibrate_all,
    calibrate_cusum,
    compute_regions,
    design_procedure,
    estimate_region_tables,
    misid_optimal_thresholds,
    optimal_lorden,
    select_thresholds,
)

__all__ = [
    "__version__",
    # models
    "ChangeModel", "Density", "KLTable", "ModelError",
    "gaussian_density", "gaussian_mean_shift", "kl_table",
    "llr_pair", "llr_vs_f", "multichannel",
    # procedures
    "ProcedureSpec", "RunOutcome", "Scenario", "StatisticBank",
    "pathwise_stop_times", "run", "step",
    # montecarlo
    "EstimateTable", "MCConfig", "MisidEstimate", "RunBatch",
    "estimate_arl_false_alarm", "estimate_delay_at_zero", "estimate_misid",
    "rng_stream", "run_batch",
    # design
    "CalibrationResult", "CalibrationSummary", "DesignError",
    "GridExhaustedError", "RegionMask", "SchemeDesign", "ThresholdGrid",
    "calibrate_all", "calibrate_cusum", "compute_regions", "design_procedure",
    "estimate_region_tables", "misid_optimal_thresholds", "optimal_lorden", "select_thresholds",
]
