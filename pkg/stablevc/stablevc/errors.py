from __future__ import annotations

from typing import Any


class StableVcError(Exception):
    """Base class for errors raised by stablevc."""


class CorpusError(StableVcError):
    """Missing or inconsistent corpus data, or an unknown utterance/speaker id."""


class MelbFormatError(StableVcError):
    """A MELB feature file is malformed."""


class CheckpointError(StableVcError):
    """A checkpoint container could not be read."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class NonFiniteLossError(StableVcError):
    """Training produced a NaN/inf loss.

    ``snapshot`` holds the iteration and loss components at the failure;
    ``snapshot_path`` is set when a diagnostic checkpoint was written.
    """

    def __init__(self, message: str, snapshot: dict[str, Any], snapshot_path: str | None = None):
        super().__init__(message)
        self.snapshot = snapshot
        self.snapshot_path = snapshot_path


class ConfigError(StableVcError, ValueError):
    """Unknown key or unparsable value in a run configuration."""
