"""Exception hierarchy shared across the package."""


class RwmError(Exception):
    """Base class for all errors raised by rwmcgan."""


class ShapeError(RwmError, ValueError):
    pass


class DomainError(RwmError, ValueError):
    pass


class NonFiniteError(RwmError, ArithmeticError):
    """A forward operation produced NaN or Inf."""


class FormatError(RwmError):
    """A binary file (IDX, checkpoint, PGM) does not match its format."""


class LengthError(FormatError):
    """A binary file is truncated or carries trailing bytes."""


class VersionError(FormatError):
    pass


class TrainingAborted(RwmError):
    def __init__(self, step, reason):
        super().__init__(f"training aborted at step {step}: {reason}")
        self.step = step
        self.reason = reason


class GateError(RwmError):
    """The scoring classifier has not passed its accuracy gate."""

    def __init__(self, message, accuracy=None):
        super().__init__(message)
        self.accuracy = accuracy
