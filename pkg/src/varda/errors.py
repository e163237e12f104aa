"""Exception types shared across the toolkit."""


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, dtype, range)."""


class NonFiniteError(FloatingPointError):
    """A traced operation produced NaN or Inf; the message names the tape node."""


class DivergenceError(RuntimeError):
    """A model integration or optimization blew up.

    Attributes
    ----------
    step : int or None
        Step or iteration index at which the non-finite value appeared.
    history : list or None
        Iterate history up to the failure, when the caller tracked one.
    """

    def __init__(self, message, step=None, history=None):
        super().__init__(message)
        self.step = step
        self.history = history


class ResourceLimitError(RuntimeError):
    """A dense Jacobian/Hessian request exceeds the configured dimension cap."""


class SolverBreakdownError(RuntimeError):
    """BiCGSTAB hit a rho ~ 0 or omega ~ 0 breakdown; carries the solve report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class LinearSolveError(RuntimeError):
    """A direct linear solve failed (singular or non-positive-definite system)."""


class DatasetError(ValueError):
    """Base class for dataset persistence problems."""


class HeaderError(DatasetError):
    """Dataset header sidecar is missing, unparseable, or has a bad magic string."""


class VersionError(DatasetError):
    """Dataset was written with an incompatible format version."""


class ShapeError(DatasetError):
    """Dataset payload size does not match the shape declared in the header."""
