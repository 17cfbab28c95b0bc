"""Optimal stopping of two-dimensional regime-switching linear diffusions.

Subpackages solve the free-boundary problem three ways (a variational
inequality on a grid, a nonlinear integral equation for the boundary curve,
and Monte Carlo value estimates for cross-validation) and apply the result to
Bayesian quickest detection of a hidden drift change.
"""

from .regimes import (GeneratorMatrix, RegimePath, regime_at,
                      sample_regime_path, validate_generator)
from .model import (CostSpec, ModelSpec, check_assumptions, cutoff_cost,
                    eval_cost, model_from_dict)
from .onedim import AxisSolution, SolverError, axis_dirichlet_data, \
    solve_axis_problem
from .simulate import MCConfig
from .hjb import (Grid2D, ValueField, extract_boundary, interp_field,
                  make_grid, smooth_fit_gap, solve_vi, solve_vi_refined)
from .boundary import (Boundary, GEstimate, bracket_from_onedim,
                       constant_boundary, default_abscissae, eval_G,
                       resample_boundary, scale_boundary,
                       solve_integral_equation)
from .value import (ValueEstimate, estimate_value_free, estimate_value_stopped,
                    snell_martingale_check)
from .detect import (DetectionConfig, Scenario, StatsTrace, SufficientStats,
                     alarm_record, evaluate_policy, initial_stats,
                     posterior_path, read_scenario_csv, risk_via_statistics,
                     run_detector, simulate_scenario, to_osp_model,
                     update_stats, write_scenario_csv)

__all__ = [
    "GeneratorMatrix", "RegimePath", "regime_at", "sample_regime_path",
    "validate_generator",
    "CostSpec", "ModelSpec", "check_assumptions", "cutoff_cost", "eval_cost",
    "model_from_dict",
    "AxisSolution", "SolverError", "axis_dirichlet_data",
    "solve_axis_problem",
    "MCConfig",
    "Grid2D", "ValueField", "extract_boundary", "interp_field", "make_grid",
    "smooth_fit_gap", "solve_vi", "solve_vi_refined",
    "Boundary", "GEstimate", "bracket_from_onedim", "constant_boundary",
    "default_abscissae", "eval_G", "resample_boundary", "scale_boundary",
    "solve_integral_equation",
    "ValueEstimate", "estimate_value_free", "estimate_value_stopped",
    "snell_martingale_check",
    "DetectionConfig", "Scenario", "StatsTrace", "SufficientStats",
    "alarm_record", "evaluate_policy", "initial_stats", "posterior_path",
    "read_scenario_csv", "risk_via_statistics", "run_detector",
    "simulate_scenario", "to_osp_model", "update_stats",
    "write_scenario_csv",
]

__version__ = "0.1.0"
