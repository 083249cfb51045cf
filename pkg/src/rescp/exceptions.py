"""Exception hierarchy shared across the package.

The CLI maps each family onto a process exit code.
"""


class RescpError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RescpError, ValueError):
    """Invalid hyperparameter or experiment configuration."""


class DataError(RescpError, ValueError):
    """Malformed, misaligned or insufficient input data."""


class NumericError(RescpError, ArithmeticError):
    """A numerical procedure failed (singular system, divergence, ...)."""

