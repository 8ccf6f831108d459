"""Exception types shared across the package."""


class EmsdeError(Exception):
    """Base class for errors raised by emsde."""


class DimensionMismatchError(EmsdeError, ValueError):
    """A vector or matrix does not have the dimension the operation requires."""


class DivergenceError(EmsdeError, ArithmeticError):
    """Integration or training produced a non-finite value.

    Attributes
    ----------
    step : int or None
        Index of the first state/iteration that went non-finite.
    trajectory_index : int or None
        Ensemble member index, when the failure occurred inside an ensemble.
    """

    def __init__(self, message, step=None, trajectory_index=None):
        super().__init__(message)
        self.step = step
        self.trajectory_index = trajectory_index


class TrainingDivergedError(DivergenceError):
    """The training loss became non-finite; carries the history up to failure."""

    def __init__(self, message, step=None, history=None):
        super().__init__(message, step=step)
        self.history = history


class UndefinedGainError(EmsdeError, ZeroDivisionError):
    """Gain rate is undefined because the baseline RMSE is zero."""
