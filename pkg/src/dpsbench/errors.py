"""Exception types raised across the package."""

import numpy as np


class ParameterDomainError(ValueError):
    """A distribution or algorithm parameter is outside its admissible domain."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A precision matrix could not be factorized even after jitter."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the operator or signal size."""


class InsufficientSamplesError(ValueError):
    """A statistic needs more draws than were supplied."""


class DegenerateError(ValueError):
    """A reference quantity vanishes, e.g. zero calibration power or zero gold error."""


class SingularSystemError(np.linalg.LinAlgError):
    """A normal-equation system has no unique solution."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    The last iterate and the final duality gap are kept so callers can decide
    whether the result is usable anyway.
    """

    def __init__(self, message, solution=None, gap=None):
        super().__init__(message)
        self.solution = solution
        self.gap = gap


class DivergenceError(ArithmeticError):
    """Sampler iterates left the finite range (typically a too-large step weight)."""
