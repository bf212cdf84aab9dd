"""Exception types shared across the package."""

from __future__ import annotations


class DriftlabError(Exception):
    """Base class for all driftlab errors."""


class DataFormatError(DriftlabError):
    """A file or stream does not follow its declared format."""


class TrainingDiverged(DriftlabError):
    """Training hit a non-finite loss; carries the last finite checkpoint."""

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
