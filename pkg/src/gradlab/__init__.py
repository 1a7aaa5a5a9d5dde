"""Tape-based reverse-mode autodiff, reversible SGD hypergradients, and stochastic Newton steps."""

from . import autodiff, layers, ndcore, revlearn, stonewton, trainkit
from .exceptions import (
    CompositionError,
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    DomainError,
    GradlabError,
    NotPositiveDefiniteError,
    TraceCorruptionError,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "autodiff",
    "layers",
    "ndcore",
    "revlearn",
    "stonewton",
    "trainkit",
    "CompositionError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DivergenceError",
    "DomainError",
    "GradlabError",
    "NotPositiveDefiniteError",
    "TraceCorruptionError",
]
