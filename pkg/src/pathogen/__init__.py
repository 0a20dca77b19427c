"""Exact stochastic simulation of pathogen populations under whole-type immune killing."""

from .core import (
    GenealogyRecord,
    ModelId,
    Outcome,
    RunOptions,
    SimParams,
    StopReason,
    StopRule,
    Verdict,
    derive_seed,
    derive_trial_rng,
)
from .nonspatial import NonSpatialState, ns_init, ns_offspring_histogram, ns_run, ns_step, ns_total_rates
from .spatial import CoordinateOverflow, SpatialState, sp_init, sp_run, sp_step, sp_total_rates
from .experiments import (
    BisectionResult,
    RunAnomaly,
    SurvivalEstimate,
    SweepResult,
    bisect_critical,
    estimate_survival,
    linear_growth_diagnostic,
    sweep,
    wilson_interval,
)

__version__ = "0.1.0"
