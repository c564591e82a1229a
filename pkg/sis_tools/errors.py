"""Exceptions raised by sis_tools."""

from __future__ import annotations

from typing import Optional


class SimulationError(Exception):
    """Base class for everything sis_tools raises on purpose."""


class ConfigError(SimulationError, ValueError):
    """A scenario setting is missing, malformed or out of range."""

    def __init__(self, field: str, message: str) -> None:
        """Remember which field was bad."""
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def __reduce__(self) -> tuple[type[ConfigError], tuple[str, str]]:
        """Rebuild from (field, message) when sent back from a worker process."""
        return type(self), (self.field, self.message)


class GridMismatchError(SimulationError, ValueError):
    """Two paths that should share a grid don't."""


class NonFiniteError(SimulationError, ArithmeticError):
    """A nan or inf showed up in a path or in an integrator state."""

    def __init__(self, message: str, index: Optional[int] = None) -> None:
        """Remember where it happened (node or step index)."""
        super().__init__(message)
        self.index = index
