"""Total-variation regularised logistic tomography of infection propensity maps."""

__version__ = "0.1.0"

from .lattice import (DifferenceOperator, LatticeError, LatticeSpec, difference_operator,
                      downsample_map)
from .model import DegenerateResponseError, FitConfig, fit_intercept, negloglik, negloglik_and_grad
from .tvsolve import TvSolution, fit_tv
from .qut import (LambdaZeroResult, QutResult, TestReport, lambda_zero, lrt, qut_estimate,
                  tv_test)
from .tracks import Dataset, GridGeometry, dataset_from_files
from .simulate import Scenario, make_profile, simulate_population, simulate_scenario
from .baselines import empirical_estimate, estimate, gpr_logodds, minmax_scale, scaled_mse
from .bootstrap import BootstrapConfig, BootstrapResult, bootstrap_fit, coverage_eval

__all__ = [
    "BootstrapConfig", "BootstrapResult", "Dataset", "DegenerateResponseError",
    "DifferenceOperator", "FitConfig", "GridGeometry", "LambdaZeroResult", "LatticeError",
    "LatticeSpec", "QutResult", "Scenario", "TestReport", "TvSolution", "bootstrap_fit",
    "coverage_eval", "dataset_from_files", "difference_operator", "downsample_map",
    "empirical_estimate", "estimate", "fit_intercept", "fit_tv", "gpr_logodds",
    "lambda_zero", "lrt", "make_profile", "minmax_scale", "negloglik", "negloglik_and_grad",
    "qut_estimate", "scaled_mse", "simulate_population", "simulate_scenario", "tv_test",
]
