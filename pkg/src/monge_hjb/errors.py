"""Exception hierarchy shared by the solver modules."""


class MongeHJBError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MongeHJBError, ValueError):
    """Invalid grid, solver or run configuration."""


class OutOfDomainError(MongeHJBError, ValueError):
    """A point lies outside the closed computational domain."""


class DegenerateStencilError(MongeHJBError):
    """A wide-stencil arm collapsed to zero length."""


class InvalidProblemError(MongeHJBError, ValueError):
    """Problem data violates a structural requirement (e.g. f < 0)."""


class SolverError(MongeHJBError, RuntimeError):
    """A linear or nonlinear solve failed."""


class NonConvergenceError(SolverError):
    """An iteration hit its cap before meeting the tolerance.

    The partial report is attached as ``report`` so callers can inspect the
    residual history.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
