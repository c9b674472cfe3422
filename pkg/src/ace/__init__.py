"""Adaptive convex envelopes for finite-horizon stochastic control with linear dynamics."""

from .driver import (
    HorizonSolution,
    ModelValidationError,
    Policy,
    SimulationResult,
    SolveReport,
    accumulated_error_bound,
    refine_by_importance,
    simulate_policy,
    solve_horizon,
)
from .envelope import Envelope, Hyperplane, eval_envelope
from .estimator import AdaptiveConvexEnvelope
from .lp import LpProblem, LpSolution, LpStatus, SolverStalled, solve_lp
from .model import (
    AffinePiece,
    Horizon,
    LinearConstraint,
    PwlTerm,
    Scenario,
    StageModel,
    StateDomain,
    default_initial_simplex,
    load_model,
    validate_model,
)
from .oracle import GridSpec, compare, grid_dp
from .partition import Section, max_potential_error, refine_stage, split_section
from .stage import InfeasibleState, greedy_action, solve_stage

__all__ = [
    "AdaptiveConvexEnvelope",
    "AffinePiece",
    "Envelope",
    "GridSpec",
    "Horizon",
    "HorizonSolution",
    "Hyperplane",
    "InfeasibleState",
    "LinearConstraint",
    "LpProblem",
    "LpSolution",
    "LpStatus",
    "ModelValidationError",
    "Policy",
    "PwlTerm",
    "Scenario",
    "Section",
    "SimulationResult",
    "SolveReport",
    "SolverStalled",
    "StageModel",
    "StateDomain",
    "accumulated_error_bound",
    "compare",
    "default_initial_simplex",
    "eval_envelope",
    "greedy_action",
    "grid_dp",
    "load_model",
    "max_potential_error",
    "refine_by_importance",
    "refine_stage",
    "simulate_policy",
    "solve_horizon",
    "solve_lp",
    "solve_stage",
    "split_section",
    "validate_model",
]
