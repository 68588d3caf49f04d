"""Iterated correlation-map dynamics and conditional quantile ratio bounds.

The pipeline: simulate trajectories of the row-correlation iteration
(`dynamics`), fit a piecewise-constant conditional quantile bound on the
contraction ratio as a function of step size (`bounds`), score it on held-out
trajectories (`validation`), extract the expansion threshold and envelope with
uncertainty (`structural`), and persist everything deterministically
(`store`).  `cli` wires these into the `corrbound` command.
"""

from .dynamics import (
    CONVERGED,
    DEGENERATE_ROW,
    HIT_CAP,
    SimulationConfig,
    StepRecord,
    Trajectory,
    collect_pairs,
    iterate_once,
    pearson_corr,
    post_transient_pairs,
    simulate_many,
    simulate_trajectory,
)
from .bounds import (
    DEFAULT_ENLARGEMENT,
    BinPartition,
    BoundConfig,
    BoundFunction,
    EnlargementParams,
    Provenance,
    build_bound,
    build_partition,
    dilation_factor,
    evaluate,
    evaluate_batch,
    inflation_factor,
    order_statistic_quantile,
)
from .validation import (
    CoverageReport,
    SplitSpec,
    coverage,
    coverage_by_dimension,
    split_trajectories,
)
from .structural import (
    BootstrapConfig,
    BootstrapResult,
    BootstrapSummary,
    JumpReport,
    SensitivityRow,
    StructuralSummary,
    bootstrap_structural,
    expansion_threshold,
    quantile_jump_scan,
    sensitivity_cmin,
)
from .store import (
    read_bound,
    read_steps,
    write_bound,
    write_manifest,
    write_steps,
)
from .errors import (
    CorrboundError,
    DegenerateRange,
    DegenerateRow,
    EmptySample,
    EmptyValidationSet,
    InsufficientData,
    InvariantViolation,
    SchemaMismatch,
    TooFewTrajectories,
    TrainingOverlap,
)

__version__ = "1.0.0"

__all__ = [
    "CONVERGED", "DEGENERATE_ROW", "HIT_CAP",
    "SimulationConfig", "StepRecord", "Trajectory",
    "collect_pairs", "iterate_once", "pearson_corr", "post_transient_pairs",
    "simulate_many", "simulate_trajectory",
    "DEFAULT_ENLARGEMENT", "BinPartition", "BoundConfig", "BoundFunction",
    "EnlargementParams", "Provenance", "build_bound", "build_partition",
    "dilation_factor", "evaluate", "evaluate_batch", "inflation_factor",
    "order_statistic_quantile",
    "CoverageReport", "SplitSpec", "coverage", "coverage_by_dimension",
    "split_trajectories",
    "BootstrapConfig", "BootstrapResult", "BootstrapSummary", "JumpReport",
    "SensitivityRow", "StructuralSummary", "bootstrap_structural",
    "expansion_threshold", "quantile_jump_scan", "sensitivity_cmin",
    "read_bound", "read_steps", "write_bound", "write_manifest",
    "write_steps",
    "CorrboundError", "DegenerateRange", "DegenerateRow", "EmptySample",
    "EmptyValidationSet", "InsufficientData", "InvariantViolation",
    "SchemaMismatch", "TooFewTrajectories", "TrainingOverlap",
    "__version__",
]
