"""Minimum-average-power link schedules under an average-delay constraint."""

from .model import (
    ArrivalModel,
    ChannelDiscretization,
    ChannelModel,
    ConfigError,
    DiscretizationError,
    SystemConfig,
    builtin_config_names,
    channel_cdf_inverse,
    config_from_dict,
    discretize_channel,
    load_config,
    mean_arrival_rate,
    validate_config,
)
from .occupancy_lp import (
    LpSolution,
    OccupancyLp,
    OccupancyMeasure,
    Policy,
    ReducibleChainError,
    admissible_pairs,
    build_occupancy_lp,
    evaluate_measure,
    extract_policy,
    min_delay,
    policy_to_measure,
    solve_constrained,
    solve_lagrangian,
)
from .construction import (
    CdfEnvelope,
    ConstructedSolution,
    ConstructionError,
    DeterminismReport,
    FeasibilityReport,
    MassRangeError,
    PiecewiseDensity,
    PowerRatio,
    ThresholdPolicy,
    compute_envelope,
    compute_thresholds,
    construct_solution,
    density_from_measure,
    invert_envelope,
    power_ratio,
    to_threshold_policy,
    verify_deterministic,
    verify_feasibility,
)
from .simplex import LinearProgram, SimplexAnomaly, SimplexResult, solve_simplex
from .simulator import SimReport, report_to_csv, report_to_text, run_sim, step
from .sweep import (
    ConvergenceStudy,
    SweepError,
    TradeoffCurve,
    Vertex,
    convergence_study,
    default_budget_grid,
    default_lambda_max,
    enumerate_vertices,
    sweep_curve,
    vertex_distances,
)

__version__ = "0.1.0"
