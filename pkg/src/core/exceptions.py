#!/usr/bin/env python3
"""
Custom exceptions for the tackle experiment pipeline.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


def _rebuild_error(cls, args, state):
    error = cls.__new__(cls)
    error.args = args
    error.__dict__.update(state)
    return error


class TackleError(Exception):
    """Base exception for pipeline errors."""
    exit_code: int = 5

    def __reduce__(self):
        # Subclasses take structured __init__ arguments; rebuild from state instead
        return _rebuild_error, (self.__class__, self.args, self.__dict__)


class ConfigurationError(TackleError):
    """Raised when configuration is invalid or missing."""
    exit_code = 2


class DataError(TackleError):
    """Base class for data, annotation and file-format errors."""
    exit_code = 3


class AnnotationError(DataError):
    """Raised when an FPOC annotation does not fit its clip."""

    def __init__(self, fpoc_index: int, frame_count: int, source: str = "clip"):
        self.fpoc_index = fpoc_index
        self.frame_count = frame_count
        self.source = source
        super().__init__(
            f"FPOC index {fpoc_index} is outside {source} with {frame_count} frames"
        )


class LabelError(DataError):
    """Raised when a SATT score is outside 0..3."""

    def __init__(self, score: object, source: str = "manifest"):
        self.score = score
        self.source = source
        super().__init__(f"Invalid SATT score {score!r} in {source} (expected 0, 1, 2 or 3)")


class ClipFormatError(DataError):
    """Raised when a clip container or clip tensor is malformed."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Malformed clip {path}: {reason}")


class ManifestError(DataError):
    """Raised when a dataset manifest cannot be used."""
    pass


class StratificationError(DataError):
    """Raised when a class has fewer members than folds."""

    def __init__(self, label: str, members: int, folds: int):
        self.label = label
        self.members = members
        self.folds = folds
        super().__init__(
            f"Class {label} has {members} members, fewer than the {folds} requested folds"
        )


class BalancingError(DataError):
    """Raised when a training fold cannot be balanced."""
    pass


class EvaluationError(DataError):
    """Base class for metric computation errors."""
    pass


class EmptyEvaluationError(EvaluationError):
    """Raised when metrics are requested for zero samples."""
    pass


class NormalizationError(EvaluationError):
    """Raised when a confusion matrix has an empty true class."""
    pass


class OracleError(DataError):
    """Raised when the planted blob cannot be found in a frame."""
    pass


class CheckpointError(DataError):
    """Raised when a parameter checkpoint is missing or inconsistent."""
    pass


class TrainingError(TackleError):
    """Base class for optimization failures."""
    exit_code = 4


class DivergenceError(TrainingError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"Loss diverged to {value} at epoch {epoch}, batch {batch}")


class NumericError(TrainingError):
    """Raised when a forward pass produces non-finite values."""

    def __init__(self, stage: str):
        self.stage = stage
        super().__init__(f"Non-finite values produced in {stage}")


class InvariantViolation(TackleError):
    """Raised when an internal consistency check fails."""
    exit_code = 5


class StageError(TackleError):
    """Raised by the pipeline when a stage fails; wraps the original error."""

    def __init__(self, stage: str, original_error: Exception, trial: Optional[str] = None):
        self.stage = stage
        self.trial = trial
        self.original_error = original_error
        self.exit_code = getattr(original_error, "exit_code", 5)
        where = f"{stage} ({trial})" if trial else stage
        super().__init__(f"Stage {where} failed: {original_error}")
