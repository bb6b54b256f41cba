"""Exception hierarchy shared by all wetlearn modules."""


class WetLearnError(Exception):
    """Base class for every error raised by this package."""


class NonSquareLength(WetLearnError, ValueError):
    pass


class ConvergenceFailure(WetLearnError, ArithmeticError):
    pass


class NotPositiveDefinite(WetLearnError, ValueError):
    pass


class DimensionMismatch(WetLearnError, ValueError):
    pass


class NotUnitNorm(WetLearnError, ValueError):
    pass


class EmptyInterior(WetLearnError):
    """The working set has no strictly feasible point."""


class MaxIterations(WetLearnError, ArithmeticError):
    pass


class SingularMetric(WetLearnError, ArithmeticError):
    pass


class RetryExhausted(WetLearnError):
    pass


class RankDeficient(WetLearnError):
    pass


class ConfigError(WetLearnError, ValueError):
    pass


class EmptyInput(WetLearnError, ValueError):
    pass
