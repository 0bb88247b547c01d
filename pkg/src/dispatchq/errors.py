"""Exception classes shared across the toolkit.

Each maps to one CLI exit code (see :mod:`dispatchq.cli`).
"""


class ConfigurationError(ValueError):
    """Invalid parameters, malformed config, or policy/config mismatch."""


class InstabilityError(RuntimeError):
    """A queue is (or behaves as) unstable, or a feasible set is empty."""


class NumericError(RuntimeError):
    """A numerical procedure failed to converge."""
