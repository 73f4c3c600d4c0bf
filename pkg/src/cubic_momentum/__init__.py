"""Stochastic Cubic Newton with gradient and Hessian momentum."""

from .cubic import CubicModel, CubicStepResult, model_value, mu_measure, solve_cubic
from .dataio import Dataset, load_libsvm, parse_libsvm, serialize_libsvm, subsample, synth_logistic
from .engine import RunAborted, RunConfig, RunTrace, check_one_step, run, run_scnm, run_sgd
from .estimators import GradEstimatorState, HessEstimatorState, Schedule, make_schedule
from .problems import LogisticProblem, ProblemConstants, QuadraticSumProblem, estimate_constants

__version__ = "0.1.0"

__all__ = [
    "CubicModel",
    "CubicStepResult",
    "Dataset",
    "GradEstimatorState",
    "HessEstimatorState",
    "LogisticProblem",
    "ProblemConstants",
    "QuadraticSumProblem",
    "RunAborted",
    "RunConfig",
    "RunTrace",
    "Schedule",
    "check_one_step",
    "estimate_constants",
    "load_libsvm",
    "make_schedule",
    "model_value",
    "mu_measure",
    "parse_libsvm",
    "run",
    "run_scnm",
    "run_sgd",
    "serialize_libsvm",
    "solve_cubic",
    "subsample",
    "synth_logistic",
]
