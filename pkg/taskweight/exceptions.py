from typing import Any, Dict, Optional


class TaskWeightingError(Exception):
    """Base exception for task-weighting errors."""
    exit_code = 1


class ConfigurationError(TaskWeightingError):
    """Raised when an experiment, environment or model configuration is invalid."""
    exit_code = 1


class ArgumentError(TaskWeightingError):
    """Raised when operation arguments have mismatched sizes or invalid values."""
    exit_code = 1


class UnsupportedOperationError(TaskWeightingError):
    """Raised when an operation is requested for a model it does not support."""
    exit_code = 1


class NumericError(TaskWeightingError):
    """Raised when a gradient, state or solver intermediate becomes non-finite."""
    exit_code = 2

    def __init__(self, message: str, timestep: Optional[int] = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.timestep = timestep
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        text = super().__str__()
        if self.timestep is not None:
            text = f"{text} (timestep {self.timestep})"
        return text


class CheckFailedError(TaskWeightingError):
    """Raised when a diagnostic check does not pass."""
    exit_code = 3


class OutputError(TaskWeightingError):
    """Raised when a metrics or checkpoint file cannot be written or read."""
    exit_code = 1

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{message}: {path}" if path else message)
        self.path = path
