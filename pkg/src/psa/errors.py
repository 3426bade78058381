"""Exception hierarchy shared by all psa modules."""


class PsaError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(PsaError, ValueError):
    """Operands have non-conforming or invalid shapes."""


class DomainError(PsaError, ValueError):
    """Input values violate a precondition (non-finite, out of range, ...)."""


class ConvergenceError(PsaError, RuntimeError):
    """An iterative solver hit its sweep/iteration budget without converging."""


class FormatError(PsaError, ValueError):
    """A binary or text artifact has a bad magic number or malformed layout."""


class ConsistencyError(PsaError, ValueError):
    """Two inputs that must agree do not (counts, labels, shapes on disk)."""


class TrainingError(PsaError, RuntimeError):
    """Training diverged; `epoch` is the epoch at which the loss left R."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class InternalError(PsaError, RuntimeError):
    """An internal invariant was violated (a bug, not a user error)."""


class IoError(PsaError, OSError):
    """A file ended early or could not be read/written."""
