"""Semiparametric PDE estimation.

Estimate models  L(u; theta) + F(u) = 0  from noisy scattered observations
of u, where theta is a finite physical parameter and F a neural-network
mechanism, and build efficient confidence intervals for theta.
"""

from .backend import backend_name
from .data import Dataset, generate_dataset, load_dataset_csv, save_dataset_csv
from .estimator import FitConfig, FitResult, fit, select_lambda
from .grids import SpaceTimePoint, SpatialGrid, StateField, TimeMesh, interpolate
from .harness import ExperimentConfig, f_error, l2_error, run_benchmark, run_coverage
from .inference import (
    InferenceConfig,
    InferenceReport,
    confidence_interval,
    run_inference,
)
from .models import PdeModel, Theta, builtin_names, get_model, register_model
from .network import NetArchitecture, NetworkParams, init_reference
from .solver import SolverConfig, Trajectory, solve, verify_accuracy

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "Dataset", "generate_dataset", "load_dataset_csv", "save_dataset_csv",
    "FitConfig", "FitResult", "fit", "select_lambda",
    "SpaceTimePoint", "SpatialGrid", "StateField", "TimeMesh", "interpolate",
    "ExperimentConfig", "f_error", "l2_error", "run_benchmark", "run_coverage",
    "InferenceConfig", "InferenceReport", "confidence_interval", "run_inference",
    "PdeModel", "Theta", "builtin_names", "get_model", "register_model",
    "NetArchitecture", "NetworkParams", "init_reference",
    "SolverConfig", "Trajectory", "solve", "verify_accuracy",
    "__version__",
]
