"""Exception hierarchy shared by every module of the package."""


class BrainNetError(Exception):
    """Base class for all package errors."""


class ShapeError(BrainNetError, ValueError):
    """Array or tensor dimensions do not match the expected contract."""


class SymmetryError(BrainNetError, ValueError):
    """A connectivity matrix is not symmetric within tolerance."""


class DegenerateInputError(BrainNetError, ValueError):
    """Input carries no variance (e.g. a constant matrix) and cannot be standardized."""


class NumericalError(BrainNetError, ArithmeticError):
    """A NaN or infinity showed up in a forward or backward pass."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StateError(BrainNetError, RuntimeError):
    """An operation was called on empty or not-yet-populated state."""


class SpecError(BrainNetError, ValueError):
    """A synthetic-cohort or run specification violates its invariants."""


class CorruptCheckpointError(BrainNetError, IOError):
    """Checkpoint manifest and tensor blob disagree."""
