"""Periodic dispatching to parallel FCFS queues: simulation, limits, optimization."""

__version__ = "0.1.0"

from .errors import ConfigurationError, InstabilityError, NumericError

__all__ = ["ConfigurationError", "InstabilityError", "NumericError", "__version__"]
