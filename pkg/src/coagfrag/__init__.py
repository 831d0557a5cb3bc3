"""Coagulation-fragmentation equations with size diffusion.

A finite-volume simulator on truncated size grids together with numerical
checks of the hypotheses, conservation laws and moment estimates that the
model's well-posedness theory relies on.
"""
__version__ = "0.1.0"

from ._accel import HAVE_NUMBA, backend_name
from .bounds import (
    MomentBoundConstants,
    bootstrap_bound,
    bound_constants,
    gronwall_trajectory,
    lge1_check,
    lge2_check,
    lge3_check,
    lge4_check,
    lge4_rhs,
)
from .coefficients import (
    RateCoefficients,
    compute_delta_r,
    eval_ell,
    eval_V,
    eval_wr,
    make_coefficients,
    validate_hypotheses,
)
from .grid import DensityState, MassBudget, SizeGrid, moment, norm_E0, norm_Xr, norm_Y, project_initial
from .operators import DiscreteOperators, apply_coag, apply_frag, assemble, check_bilinear_bound
from .semigroup import LinearPropagator, duhamel_picard, propagate, resolvent_solve, smoothing_diagnostic
from .timestepper import RunConfig, Trajectory, global_existence_monitor, run, step
from .config import Scenario, builtin_scenarios, load_scenario

__all__ = [
    "HAVE_NUMBA", "backend_name", "MomentBoundConstants", "bootstrap_bound", "bound_constants",
    "gronwall_trajectory", "lge1_check", "lge2_check", "lge3_check", "lge4_check", "lge4_rhs",
    "RateCoefficients", "compute_delta_r", "eval_ell", "eval_V", "eval_wr", "make_coefficients",
    "validate_hypotheses", "DensityState", "MassBudget", "SizeGrid", "moment", "norm_E0", "norm_Xr",
    "norm_Y", "project_initial", "DiscreteOperators", "apply_coag", "apply_frag", "assemble",
    "check_bilinear_bound", "LinearPropagator", "duhamel_picard", "propagate", "resolvent_solve",
    "smoothing_diagnostic", "RunConfig", "Trajectory", "global_existence_monitor", "run", "step",
    "Scenario", "builtin_scenarios", "load_scenario",
]
