"""Exception hierarchy shared by every module."""


class AmmsnnError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(AmmsnnError, ValueError):
    exit_code = 2


class DataError(AmmsnnError, ValueError):
    exit_code = 3


class DimensionError(AmmsnnError, ValueError):
    """Operand shapes do not fit the operation."""

    exit_code = 3


class UsageError(AmmsnnError, RuntimeError):
    exit_code = 2


class NumericalError(AmmsnnError, FloatingPointError):
    """A forward value or gradient became NaN/Inf."""

    exit_code = 4


class DegenerateRepresentationError(NumericalError):
    """A representation vector has (near) zero norm, so cosine is undefined."""


class CheckpointError(AmmsnnError):
    exit_code = 3


class GradcheckFailure(AmmsnnError):
    exit_code = 5
