"""
Error types shared across the library.

Every error raised on purpose derives from EgosegError so the CLI can
report it in one line. The concrete classes also inherit from the closest
builtin so callers that only know ValueError/OSError still catch them.
"""

from typing import Any


class EgosegError(Exception):
    """Base class for all library errors."""


class ValidationError(EgosegError, ValueError):
    """A value is outside its declared domain (labels, masks, counts)."""


class ShapeError(EgosegError, ValueError):
    """A tensor does not satisfy a shape contract."""


class ConfigError(EgosegError, ValueError):
    """A config key is unknown or its value is invalid."""


class DatasetError(EgosegError, OSError):
    """A dataset file is missing or unreadable."""

    def __init__(self, message: str, path: Any = None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path


class CheckpointError(EgosegError):
    """A checkpoint cannot be read."""


class CheckpointVersionError(CheckpointError):
    """A checkpoint has an unknown format version or a different architecture."""


class NonFiniteLossError(EgosegError, RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, iteration: int, lr: float, components: dict[str, float]):
        details = ", ".join(f"{k}={v:.6g}" for k, v in components.items())
        super().__init__(f"Non-finite loss at iteration {iteration} (lr={lr:.3g}): {details}")
        self.iteration = iteration
        self.lr = lr
        self.components = components
