"""Sparse linear regression with SCAD/MCP/LASSO penalties.

Coordinate-descent fitting, an approximate leave-one-out CV formula with an
instability detector, and replica-symmetric equations of state for phase
diagrams of the i.i.d. Gaussian design ensemble.
"""
from .penalty import (Branch, Kind, NumericalError, ParameterError, PenaltySpec,
                      ScalarProxResult, candidate_stationary_points, penalty_curvature,
                      penalty_value, scalar_prox, scalar_prox_oracle)
from .solver import (Estimate, RegressionProblem, SolutionPath, cd_update_coordinate,
                     coordinate_descent, input_mse, lambda_grid, output_mse, solve_path)
from .datagen import (EnsembleParams, SyntheticInstance, empirical_tp_fp, gen_instance,
                      roc_r, standardize)
from .crossval import (CvCurve, CvPointResult, Method, approx_loo, detect_instability,
                       generalization_gap_check, kfold_cv, literal_loo, normalized_mse,
                       one_std_error_select)
from .replica import (OrderParams, RsSolution, Status, XiBundle, at_condition, eos_rhs,
                      observables, phase_boundaries, sigma_mixture, solve_eos, sweep_lambda,
                      xi_closed_form)

__version__ = "0.1.0"
