"""Exception hierarchy shared across the package.

The CLI maps each family onto a process exit code (see ``orpco.cli``).
"""
from sklearn.exceptions import NotFittedError


class OrpcoError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(OrpcoError, ValueError):
    """Invalid hyperparameters, ratios or experiment configuration."""


class DataError(OrpcoError, ValueError):
    """Problems with dataset contents or files."""


class ParseError(DataError):
    """A dataset file could not be parsed."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ValidationError(DataError):
    """A value violates its declared variable space."""

    def __init__(self, message, variable=None):
        self.variable = variable
        super().__init__(message)


class TrainingError(OrpcoError, RuntimeError):
    """Training diverged (non-finite loss or gradient)."""

    def __init__(self, message, step=None, epoch=None, member=None):
        self.step = step
        self.epoch = epoch
        self.member = member
        parts = []
        if member is not None:
            parts.append(f"member {member}")
        if epoch is not None:
            parts.append(f"epoch {epoch}")
        if step is not None:
            parts.append(f"step {step}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NumericalError(OrpcoError, ArithmeticError):
    """A linear-algebra routine failed even after regularisation."""


__all__ = [
    "OrpcoError",
    "ConfigurationError",
    "DataError",
    "ParseError",
    "ValidationError",
    "TrainingError",
    "NumericalError",
    "NotFittedError",
]
