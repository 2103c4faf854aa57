"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(ValueError):
    """Invalid model, decoder, or run configuration."""


class UsageError(ValueError):
    """Operation invoked inconsistently with the configured mode."""


class DataError(ValueError):
    """Dataset, manifest, or label contents invalid."""


class NumericError(ArithmeticError):
    """Non-finite value appeared where a finite one is required."""
