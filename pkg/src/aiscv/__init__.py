"""Adaptive importance sampling with control variates for many expectations at once."""

from .adaptive import BudgetSchedule, RunReport, run
from .applications import (build_param_sensitivity_problem, build_sobol_problem,
                           cantilever_density, cantilever_phi, cantilever_response,
                           cantilever_sobol_problem, moments_problem, sobol_from_expectations)
from .densities import (CorrelatedJointDensity, GaussianDensity, LogNormalDensity,
                        MarginalSpec, MixtureDensity, ProductDensity, density_from_config)
from .errors import (AiscvError, BudgetError, ConfigError, DegenerateControl, NumericalError,
                     SingularCovariance, SupportViolation, UnreachableTarget)
from .estimators import (CvEstimate, EstimationProblem, Target, beta_hat, cv_estimate,
                         is_estimate, weighted_criterion)
from .experiments import ExperimentConfig, ResultTable, run_experiment

__version__ = "0.1.0"
