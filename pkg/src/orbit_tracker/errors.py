"""Exception hierarchy shared by every module."""


class OrbitTrackerError(Exception):
    """Base class for all package errors."""


class InvalidAlgebraVector(OrbitTrackerError, ValueError):
    pass


class LogBranchError(OrbitTrackerError, ValueError):
    """Group element lies at or beyond the cut locus of the exponential chart."""


class BasisMismatch(OrbitTrackerError, ValueError):
    pass


class BasisError(OrbitTrackerError, ValueError):
    """A generator set violates one of the basis invariants."""

    def __init__(self, message, invariant="lie.basis"):
        super().__init__(message)
        self.invariant = invariant


class NotAdClosed(OrbitTrackerError, ValueError):
    """A conjugated generator or bracket left the span of the basis."""


class DimError(OrbitTrackerError, ValueError):
    pass


class ConfigError(OrbitTrackerError, ValueError):
    pass


class DomainError(OrbitTrackerError, ValueError):
    pass


class NestingError(OrbitTrackerError, ValueError):
    pass


class SubalgebraClosureError(OrbitTrackerError, ValueError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class SingularFit(OrbitTrackerError, ValueError):
    pass


class NumericalBlowup(OrbitTrackerError, ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class GridBudgetError(OrbitTrackerError, ValueError):
    pass
