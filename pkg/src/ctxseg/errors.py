"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError/CheckpointError -> 2, NumericalError -> 3.
"""


class ShapeError(ValueError):
    """Tensor extents violate an operation contract."""


class ConfigError(ValueError):
    """Invalid run configuration; the message lists every violation."""


class DataError(ValueError):
    """Unreadable or inconsistent input data."""


class CheckpointError(ValueError):
    """Checkpoint manifest, blob, or hyperparameter mismatch."""


class NumericalError(ArithmeticError):
    """NaN or Inf encountered where finite values are required."""
