"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""
from typing import Any, Optional


class CoderError(Exception):
    exit_code: int = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details


class ConfigError(CoderError):
    exit_code = 2


class DimensionMismatchError(ConfigError, ValueError):
    pass


class IndexOutOfRangeError(ConfigError, IndexError):
    pass


class DenseCapError(ConfigError):
    """Raised when a dense construction would exceed ``settings.DENSE_CAP``."""


class NotPsdError(ConfigError):
    pass


class DomainError(ConfigError):
    """A point outside dom(g) was supplied where one inside is required."""


class DataFormatError(ConfigError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message, line_number=line_number)
        self.line_number = line_number


class DataIOError(CoderError):
    exit_code = 4


class DivergenceError(CoderError):
    exit_code = 3

    def __init__(self, message: str, iteration: int, last_norm: float = float("nan"), result: Any = None):
        super().__init__(message, iteration=iteration, last_norm=last_norm)
        self.iteration = iteration
        self.last_norm = last_norm
        # Partial SolveResult, attached by the solver loop
        self.result = result


class LipschitzCapError(CoderError):
    exit_code = 3

    def __init__(self, message: str, iteration: int, L: float):
        super().__init__(message, iteration=iteration, L=L)
        self.iteration = iteration
        self.L = L
