"""Exception types raised across the package."""


class JitterError(Exception):
    """Base class for all package errors."""


class DimensionError(JitterError, ValueError):
    pass


class NumericError(JitterError, FloatingPointError):
    pass


class ContractError(JitterError, ValueError):
    pass


class ConfigurationError(JitterError, ValueError):
    pass


class PartitionError(JitterError, ValueError):
    pass


class PerturbationError(JitterError, ValueError):
    pass


class RecordError(JitterError, ValueError):
    pass


class CheckpointError(JitterError):
    pass


class ScheduleError(JitterError):
    pass


class DataError(JitterError, ValueError):
    pass


class UndefinedScoreError(JitterError):
    pass


class DependencyError(JitterError):
    """A pipeline stage was started without the artifacts of its prerequisite."""
