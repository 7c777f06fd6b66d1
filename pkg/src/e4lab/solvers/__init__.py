"""Offline solvers for (robust) constrained problems on induced CMDPs."""
from .common import SolverConfig, uniform_start
from .dp import (DpResult, lagrangian_dp, robust_evaluate, robust_value_iteration,
                 solve_lagrangian_dp)
from .lp import OccupationMeasure, occupation_lp, solve_occupation_lp
from .pg import (PgResult, exact_lagrangian, lagrangian_gradient_estimate, policy_gradient,
                 solve_policy_gradient)

__all__ = [
    "SolverConfig", "uniform_start",
    "DpResult", "lagrangian_dp", "robust_evaluate", "robust_value_iteration", "solve_lagrangian_dp",
    "OccupationMeasure", "occupation_lp", "solve_occupation_lp",
    "PgResult", "exact_lagrangian", "lagrangian_gradient_estimate", "policy_gradient",
    "solve_policy_gradient",
]
