"""
Exception hierarchy shared by every simcl module.
"""
from typing import Optional


class SimclError(Exception):
    """Base class for all simcl errors."""


class ShapeError(SimclError, ValueError):
    """Tensor or image extents do not match an operation's shape rule."""


class NumericError(SimclError, ArithmeticError):
    """A computation produced (or was given) a non-finite value."""


class ContractError(SimclError, ValueError):
    """A caller violated an operation's precondition."""


class StateError(SimclError, RuntimeError):
    """An object was used in a state that forbids the call."""


class ConfigError(SimclError, ValueError):
    """Invalid configuration value or unknown configuration key."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if key is not None:
            location.append(f"key '{key}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class IngestionError(SimclError, OSError):
    """A dataset file is missing or unreadable."""


class FormatError(SimclError, ValueError):
    """A file does not follow its documented binary or text format."""


class CompatibilityError(SimclError, ValueError):
    """A checkpoint does not match the model requesting it."""


class UsageError(SimclError, ValueError):
    """The command line or report input is unusable."""


class ReportError(SimclError, ValueError):
    """Runs cannot be aggregated together."""


class TrainingStepError(SimclError, RuntimeError):
    """A training step failed; carries the procedure and the step index."""

    def __init__(self, procedure: str, step: int, cause: Exception):
        self.procedure = procedure
        self.step = step
        self.cause = cause
        super().__init__(f"{procedure} failed at step {step}: {type(cause).__name__}: {cause}")
