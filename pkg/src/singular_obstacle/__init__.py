"""Finite-difference solver and regularity diagnostics for obstacle
problems with a singular (v - phi)^gamma absorption term."""

from .energy import (
    EnergyDensity,
    GrowthParams,
    NonConvexDensityWarning,
    check_structural_bounds,
    convexity_gap,
    energy_jet,
    finite_difference_check,
    h_jet,
    validated_nu,
)
from .estimator import ObstacleSolver
from .freeboundary import ContactClassification, classify_contact, gradient_match
from .grid import Domain, Grid, GridField, discrete_gradient, make_grid, oscillation_integral, sup_on_ball
from .problems import benchmark_problem, build_problem, dead_core_constant, obstacle_limited_problem
from .regularity import (
    ExponentFit,
    ExponentPrediction,
    blowup_rescale,
    campanato_exponent,
    dyadic_decay_check,
    energy_scaling_identity_check,
    growth_exponent,
    theoretical_exponents,
)
from .solver import (
    ConstraintViolation,
    ProblemSpec,
    SolveResult,
    SolverConfig,
    discrete_energy,
    el_residual,
    linf_bound_violation,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "ConstraintViolation",
    "ContactClassification",
    "Domain",
    "EnergyDensity",
    "ExponentFit",
    "ExponentPrediction",
    "Grid",
    "GridField",
    "GrowthParams",
    "NonConvexDensityWarning",
    "ObstacleSolver",
    "ProblemSpec",
    "SolveResult",
    "SolverConfig",
    "benchmark_problem",
    "blowup_rescale",
    "build_problem",
    "campanato_exponent",
    "check_structural_bounds",
    "classify_contact",
    "convexity_gap",
    "dead_core_constant",
    "discrete_energy",
    "discrete_gradient",
    "dyadic_decay_check",
    "el_residual",
    "energy_jet",
    "energy_scaling_identity_check",
    "finite_difference_check",
    "gradient_match",
    "growth_exponent",
    "h_jet",
    "linf_bound_violation",
    "make_grid",
    "obstacle_limited_problem",
    "oscillation_integral",
    "solve",
    "sup_on_ball",
    "theoretical_exponents",
    "validated_nu",
]
