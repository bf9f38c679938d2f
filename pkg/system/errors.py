"""Error types and their process exit codes."""
from __future__ import annotations

from typing import Optional

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class NoisyCPError(Exception):
    """Base class for every error raised on purpose by noisycp."""

    kind = "error"
    exit_code = EXIT_RUNTIME


class ValidationError(NoisyCPError):
    """Bad input data or configuration, detected before/while computing."""

    kind = "validation"
    exit_code = EXIT_VALIDATION


class InputError(ValidationError):
    """A value handed to a kernel is outside its domain.

    ``row`` is the 0-based sample index when the problem is tied to one row
    of a probability matrix.
    """

    kind = "input"

    def __init__(self, message: str, row: Optional[int] = None) -> None:
        super().__init__(message)
        self.row = row


class ConfigError(ValidationError):
    """A configuration value is missing, unknown or out of range."""

    kind = "config"


class HarnessError(NoisyCPError):
    """A runtime failure inside the experiment harness or a worker task."""

    kind = "runtime"
