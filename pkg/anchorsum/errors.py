"""Exception types raised across the anchorsum pipeline."""

from typing import Optional


class AnchorsumError(Exception):
    """Base class for every error raised by anchorsum."""


class ConfigError(AnchorsumError, ValueError):
    """Invalid or inconsistent configuration."""


class InvalidInput(AnchorsumError, ValueError):
    """An operation received input violating its precondition."""


class ParseError(AnchorsumError, ValueError):
    """A structured input file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyVideo(AnchorsumError, ValueError):
    """A source produced zero decodable frames."""


class DecoderError(AnchorsumError, OSError):
    """The external decoder failed or could not be started."""


class BackendError(AnchorsumError, RuntimeError):
    """A model backend call failed."""

    def __init__(self, message: str, retryable: bool = True):
        self.retryable = retryable
        super().__init__(message)


class DegenerateVector(AnchorsumError, ValueError):
    """A zero-norm vector was used where a direction is required."""


class InvalidRange(AnchorsumError, ValueError):
    """An empty or out-of-bounds index range."""


class InvalidPenalty(AnchorsumError, ValueError):
    """A non-positive change-point penalty."""


class OracleLimit(AnchorsumError, ValueError):
    """The brute-force segmentation oracle was asked for too large a signal."""


class ValidationUnavailable(AnchorsumError, RuntimeError):
    """Label validation could not be obtained from the backend."""


class StageError(AnchorsumError, RuntimeError):
    """A pipeline stage failed fatally."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")


EMPTY_ANCHORS = "empty-anchors"
