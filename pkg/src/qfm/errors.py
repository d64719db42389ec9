"""Exception hierarchy shared by every qfm module."""


class QFMError(Exception):
    """Base class. ``category`` is the machine-readable tag the CLI reports."""

    category = "error"


class ParameterError(QFMError, ValueError):
    category = "parameter"


class ShapeError(QFMError, ValueError):
    category = "shape"


class ImageFormatError(QFMError, ValueError):
    category = "io"


class DivergenceError(QFMError, ArithmeticError):
    """Raised when an Euler step produces a non-finite state."""

    category = "divergence"

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at Euler step {step}")


class TrainingDivergenceError(QFMError, ArithmeticError):
    """Raised when the training loss becomes non-finite."""

    category = "divergence"

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss in epoch {epoch}")
