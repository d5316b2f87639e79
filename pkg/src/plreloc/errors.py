"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RelocError(Exception):
    """Base class for every error raised by this package."""


class InvalidDepthError(RelocError, ValueError):
    pass


class BoundsError(RelocError, IndexError):
    pass


class DegenerateCovarianceError(RelocError, ValueError):
    pass


class DegenerateConfigurationError(RelocError, ValueError):
    pass


class FormatError(RelocError, ValueError):
    pass


class ParseError(FormatError):
    """A text file line could not be parsed; ``lineno`` is 1-based."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class PoseValidationError(RelocError, ValueError):
    pass


class EmptyViewError(RelocError, ValueError):
    pass


class InsufficientPointsError(RelocError, ValueError):
    pass


class EmptySampleError(RelocError, ValueError):
    pass


class HypothesisGenerationError(RelocError, RuntimeError):
    pass


class RelocalizationFailure(RelocError, RuntimeError):
    pass


class InvalidStartError(RelocError, ValueError):
    pass


class EmptyInputError(RelocError, ValueError):
    pass


class ConfigValidationError(RelocError, ValueError):
    pass


class TrainingInputError(RelocError, ValueError):
    pass
