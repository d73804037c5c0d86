"""
Exception hierarchy. Every error carries the exit code the CLI returns for it.
"""

from typing import Any, Optional


class RobustFpcaError(Exception):
    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context
        self.time_index: Optional[int] = None

    def at_time(self, time_index: int) -> "RobustFpcaError":
        """Annotate with the grid index where a pointwise solve failed."""
        self.time_index = time_index
        self.message = f"{self.message} (time index {time_index})"
        self.args = (self.message,)
        return self


class ValidationError(RobustFpcaError):
    exit_code = 2


class ConfigError(ValidationError):
    pass


class ConcentrationError(ValidationError):
    pass


class SingularityError(ValidationError):
    pass


class IllConditionedError(ValidationError):
    pass


class DegenerateSpectrumError(ValidationError):
    pass


class DegeneratePairError(ValidationError):
    pass


class ConvergenceError(RobustFpcaError):
    exit_code = 3

    def __init__(self, message: str, last_iterate: Any = None, step: float = float("nan"), **context: Any):
        super().__init__(message, **context)
        self.last_iterate = last_iterate
        self.step = step


class InsufficientSampleError(RobustFpcaError):
    exit_code = 4


class DataFileError(RobustFpcaError):
    exit_code = 5

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None, **context: Any):
        location = path if path is not None else ""
        if line is not None:
            location = f"{location}:{line}"
        if location:
            message = f"{location}: {message}"
        super().__init__(message, **context)
        self.path = path
        self.line = line
