"""Exception hierarchy shared by the library and the CLI.

The CLI maps UsageError (and subclasses) to exit code 2 and NumericError
to exit code 1.
"""


class DpleError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(DpleError):
    """Caller broke an operation's contract (bad arguments, missing files)."""


class ConfigError(UsageError):
    """Invalid configuration key or value."""


class DataError(UsageError):
    """Dataset violates an invariant (bad labels, too few examples, ...)."""


class DimensionError(UsageError):
    """Tensor shapes incompatible with the requested operation."""


class FormatError(UsageError):
    """Malformed or unsupported container file."""


class NumericError(DpleError):
    """Non-finite or degenerate numerics (zero norms, diverged loss)."""
