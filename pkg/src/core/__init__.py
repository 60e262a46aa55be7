"""Numerical kernel: models, E-step, M-step and inference"""

from .exceptions import (
    ConfigError,
    ConvergenceError,
    DataFormatError,
    DomainError,
    UnidentifiableError,
    ZicpError,
)
from .inference import FitResult, confidence_region, marginal_loglik, mcem_fit
from .model import Dataset, Kind, Stratum, Theta, simulate_hierarchy, uniform_design
from .schemas import McemConfig, StudyGrid
from .specfun import RngStream

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataFormatError",
    "Dataset",
    "DomainError",
    "FitResult",
    "Kind",
    "McemConfig",
    "RngStream",
    "Stratum",
    "StudyGrid",
    "Theta",
    "UnidentifiableError",
    "ZicpError",
    "confidence_region",
    "marginal_loglik",
    "mcem_fit",
    "simulate_hierarchy",
    "uniform_design",
]
