"""Error types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.  Everything else is a plain bug.
"""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class DataError(ValueError):
    """Input data violates a precondition (wrong labels, empty split, ...)."""


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf where finite values are required."""


class FormatError(ValueError):
    """A serialized file does not match the expected binary layout."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class GraphError(RuntimeError):
    """Misuse of the autodiff tape (non-scalar backward, missing grad, ...)."""
