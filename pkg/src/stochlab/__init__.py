"""Stochastic simulation laboratory: samplers, exact solvers and reproducible experiments."""

from .errors import ConvergenceError, DomainError, ParameterError, UnknownExperiment
from .harness import ExperimentPlan, Report, run, run_experiment
from .randomness import RandomStream

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "DomainError", "ExperimentPlan", "ParameterError", "RandomStream",
           "Report", "UnknownExperiment", "run", "run_experiment"]
