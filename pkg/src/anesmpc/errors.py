"""Exception types shared across the package."""


class AnesMpcError(Exception):
    """Base class for all package errors."""


class ModelConfigError(AnesMpcError):
    """Invalid model parameters or configuration (CLI exit code 2)."""


class GeometryError(AnesMpcError):
    """LP / polyhedron computation failed (cycling, infeasible input, ...)."""


class SolverInfeasibleError(AnesMpcError):
    """A QP that must be feasible in nominal operation was not (CLI exit code 3).

    Carries an optional ``report`` with the violated constraints and, when
    raised inside a closed-loop run, the step index.
    """

    def __init__(self, message: str, report=None, step: int | None = None):
        super().__init__(message)
        self.report = report
        self.step = step
