"""Exception hierarchy shared by the core modules and the command line."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

__all__ = [
    "MotifGNNError",
    "GraphFormatError",
    "EmptyGraphError",
    "FeatureFormatError",
    "LabelError",
    "ShapeError",
    "TapeError",
    "ConfigError",
    "MotifRangeError",
    "SnapshotError",
    "TrainingDivergedError",
]


class MotifGNNError(RuntimeError):
    """Base class for every failure raised by the motifgnn core."""


class GraphFormatError(MotifGNNError):
    """Raised when an edge file line cannot be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyGraphError(MotifGNNError):
    """Raised when an edge file holds no edges at all."""


class FeatureFormatError(MotifGNNError):
    """Raised for malformed feature CSV headers or cells."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None) -> None:
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        if location:
            message = f"{', '.join(location)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class LabelError(MotifGNNError, ValueError):
    """Raised for invalid label values, splits or unknown node ids."""


class ShapeError(MotifGNNError, ValueError):
    """Raised when operand shapes do not line up."""


class TapeError(MotifGNNError):
    """Raised when the autodiff contract is violated."""


class ConfigError(MotifGNNError, ValueError):
    """Raised for unknown config keys or out-of-range values."""


class MotifRangeError(MotifGNNError, ValueError):
    """Raised when a motif index lies outside 1..13."""


class SnapshotError(MotifGNNError):
    """Raised when a model snapshot cannot be read or does not fit the config."""


class TrainingDivergedError(MotifGNNError):
    """Raised when the training loss stops being finite.

    ``last_good`` holds the parameter arrays in effect before the last update
    whose loss and gradients were finite, so callers can still persist them.
    """

    def __init__(self, message: str, last_good: Optional[Dict[str, np.ndarray]] = None) -> None:
        super().__init__(message)
        self.last_good = dict(last_good or {})
