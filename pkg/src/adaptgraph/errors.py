"""Exception types shared across the package.

Every error raised on purpose derives from one of these, so callers (and the
command line front end) can map failure classes to exit codes without string
matching.
"""


class ShapeError(ValueError):
    """An operand has the wrong rank or a dimension that does not line up."""


class InvalidInputError(ValueError):
    """An argument value is out of range (bad axis, k > N, label out of bounds, ...)."""


class ConfigError(ValueError):
    """A configuration object or CLI flag combination is unusable."""


class UsageError(RuntimeError):
    """The API was called in a way that makes no sense (e.g. backward on a non-scalar)."""


class DataError(RuntimeError):
    """A data file or stream is malformed or inconsistent with its header."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""
