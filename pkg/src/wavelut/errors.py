"""Exception types shared across the engine.

The CLI maps these onto process exit codes: configuration problems exit
with 2, file I/O problems with 3, and numeric failures with 4.
"""

from __future__ import annotations


class WaveLutError(Exception):
    """Base class for all engine errors."""


class ShapeError(WaveLutError, ValueError):
    """Array dimensions do not match what an operation requires."""


class InvalidArgumentError(WaveLutError, ValueError):
    """An argument is structurally valid but semantically unusable."""


class NumericError(WaveLutError, ArithmeticError):
    """Non-finite values or degenerate numerics encountered."""


class FormatError(WaveLutError, ValueError):
    """A file does not conform to its documented binary/JSON layout."""


class FrameIOError(WaveLutError, OSError):
    """A frame file or frame directory could not be read or written."""


class ConfigError(WaveLutError, ValueError):
    """A configuration file or CLI flag combination is unusable."""


class OptimizationError(WaveLutError, RuntimeError):
    """The fitting loop diverged; carries the last finite state."""

    def __init__(self, message: str, last_state=None, history=None):
        super().__init__(message)
        self.last_state = last_state
        self.history = history if history is not None else []


class PipelineStageError(WaveLutError, RuntimeError):
    """A pipeline stage failed; identifies the stage for diagnostics."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
