"""
Core components of the tackle experiment pipeline.

Components:
    - Custom exception hierarchy with exit codes (exceptions.py)
    - Logging configuration (logger.py)
    - Video transformer forward/backward passes (vivit.py)
    - Focal loss, Adam and early stopping (trainer.py)
    - Trial scheduling over a process pool (trial_manager.py)
    - Staged experiment pipeline (pipeline.py)

Only the exception and logging modules are imported here; the rest depend
on config.config, which itself imports core.exceptions.
"""

from .exceptions import (
    ConfigurationError,
    DataError,
    InvariantViolation,
    StageError,
    TackleError,
    TrainingError,
)
from .logger import app_logger, configure_logging, data_logger, train_logger

__all__ = [
    # Exception hierarchy (base first, then specific)
    "TackleError",
    "ConfigurationError",
    "DataError",
    "TrainingError",
    "InvariantViolation",
    "StageError",
    # Logging components
    "app_logger",
    "data_logger",
    "train_logger",
    "configure_logging",
]
