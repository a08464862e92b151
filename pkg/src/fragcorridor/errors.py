"""Exception hierarchy shared by all modules."""


class FragCorridorError(Exception):
    """Base class for every error raised by the package."""


class DivergenceError(FragCorridorError, ValueError):
    """Moment integral evaluated outside its finiteness domain."""


class UnsupportedMeasureError(FragCorridorError, ValueError):
    """Dislocation measure outside the supported class (finite activity, conservative)."""


class IllConditionedError(FragCorridorError, ValueError):
    pass


class NoRootError(FragCorridorError, ArithmeticError):
    pass


class SeriesDivergenceError(FragCorridorError, ArithmeticError):
    """Convolution series for W^(q) failed to converge on the grid."""


class RootNotFoundError(FragCorridorError, ArithmeticError):
    pass


class GridTooCoarseError(FragCorridorError, ArithmeticError):
    pass


class InvalidTableError(FragCorridorError, ValueError):
    pass


class DomainError(FragCorridorError, ValueError):
    pass


class MonotonicityViolation(FragCorridorError, ArithmeticError):
    pass


class MeasureContractError(FragCorridorError, ValueError):
    """A split sampler produced fractions that do not tile the parent."""


class PopulationOverflow(FragCorridorError, RuntimeError):
    def __init__(self, message: str, time_reached: float):
        super().__init__(message)
        self.time_reached = time_reached


class ConfigurationError(FragCorridorError, ValueError):
    pass


class InsufficientSurvivorsError(FragCorridorError, ValueError):
    pass


class ExtinctionError(InsufficientSurvivorsError):
    """Every replica was absorbed before the fit window."""


class InsufficientDataError(FragCorridorError, ValueError):
    pass


class ExtinctReplicaError(FragCorridorError, ValueError):
    pass


class ResolutionRangeError(FragCorridorError, ValueError):
    pass
