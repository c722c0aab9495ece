"""Exception types shared across the package."""


class ParLangevinError(Exception):
    """Base class for all package errors."""


class InvalidTargetError(ParLangevinError, ValueError):
    pass


class InvalidParameterError(ParLangevinError, ValueError):
    pass


class InvalidScheduleError(InvalidParameterError):
    pass


class InvalidInputError(ParLangevinError, ValueError):
    pass


class ScheduleViolationError(ParLangevinError):
    """A schedule departs from the planner without an explicit acknowledgment."""


class InternalPrecisionError(ParLangevinError, ArithmeticError):
    pass


class SingularFitError(ParLangevinError, ValueError):
    pass


class ConfigurationError(ParLangevinError):
    pass
