"""Interacting urn dynamics for market-share concentration.

Units of demand sit in one or more markets; a random-scan chain repeatedly
vacates a unit and refills it from a three-branch conditional (new firm,
cross-market copy, within-market copy). The package bundles the simulation
engine, exact small-instance oracles for the stationary law, scenario file
I/O, and a CLI.
"""

from .dynamics import (
    AntitrustRemoval,
    BranchOutcome,
    CustomSelection,
    IdentitySelection,
    InverseClusterSelection,
    InverseRemoval,
    MigrationKernel,
    NeutralRemoval,
    ParameterSet,
    ProportionalRemoval,
    SigmaSelection,
    UniformUnitRemoval,
    UnitSelection,
    apply_patch,
    branch_probabilities,
    normalizer,
    removal_weights,
    sample_full_conditional,
    select_target,
)
from .engine import (
    CompetitiveStart,
    CustomStart,
    EngineConfig,
    MonopolyStart,
    RetentionPlan,
    Schedule,
    ScheduleEntry,
    StepInfo,
    SummaryStats,
    Trace,
    TraceRecord,
    continuous_run,
    gibbs_step,
    initialize,
    run,
    snapshot,
    step_with_info,
)
from .errors import CapacityError, SamplerError, UndefinedPolicyError, ValidationError
from .measures import (
    BetaBase,
    DiscreteBase,
    EmpiricalMeasure,
    Histogram,
    base_mean,
    histogram,
    sample_base,
    weighted_empirical_total,
)
from .oracle import (
    FiniteInstance,
    check_lemma1,
    detailed_balance_gap,
    enumerate_states,
    exact_joint,
    one_step_drift_check,
    run_all_checks,
    stationarity_gap,
    stationary_moment_check,
    transition_matrix,
)
from .scenario import parse_scenario, serialize_scenario
from .state import MarketConfiguration, SystemState, cluster_view
from .traceio import SweepReport, emit_trace, herfindahl, sweep

__version__ = "0.1.0"

__all__ = [
    "AntitrustRemoval",
    "BetaBase",
    "BranchOutcome",
    "CapacityError",
    "CompetitiveStart",
    "CustomSelection",
    "CustomStart",
    "DiscreteBase",
    "EmpiricalMeasure",
    "EngineConfig",
    "FiniteInstance",
    "Histogram",
    "IdentitySelection",
    "InverseClusterSelection",
    "InverseRemoval",
    "MarketConfiguration",
    "MigrationKernel",
    "MonopolyStart",
    "NeutralRemoval",
    "ParameterSet",
    "ProportionalRemoval",
    "RetentionPlan",
    "SamplerError",
    "Schedule",
    "ScheduleEntry",
    "SigmaSelection",
    "StepInfo",
    "SummaryStats",
    "SweepReport",
    "SystemState",
    "Trace",
    "TraceRecord",
    "UndefinedPolicyError",
    "UniformUnitRemoval",
    "UnitSelection",
    "ValidationError",
    "apply_patch",
    "base_mean",
    "branch_probabilities",
    "check_lemma1",
    "cluster_view",
    "continuous_run",
    "detailed_balance_gap",
    "emit_trace",
    "enumerate_states",
    "exact_joint",
    "gibbs_step",
    "herfindahl",
    "histogram",
    "initialize",
    "normalizer",
    "one_step_drift_check",
    "parse_scenario",
    "removal_weights",
    "run",
    "run_all_checks",
    "sample_base",
    "sample_full_conditional",
    "select_target",
    "serialize_scenario",
    "snapshot",
    "stationarity_gap",
    "stationary_moment_check",
    "step_with_info",
    "sweep",
    "transition_matrix",
    "weighted_empirical_total",
]
