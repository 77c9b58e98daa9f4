"""
Exception hierarchy for ecgtcn.

Every exception raised on purpose by the library derives from `EcgTcnError` and
carries the process exit code the command-line interface returns for it. Each
class also derives from the closest builtin, so ``except ValueError`` keeps
working for library callers.

Exit codes
----------
0 success, 1 usage, 2 data/container, 3 numeric divergence, 4 infeasible plan.
"""

from __future__ import annotations

from typing import ClassVar

__all__ = [
    "CalibrationError",
    "CapacityError",
    "ContainerError",
    "DataError",
    "DomainError",
    "EcgTcnError",
    "EmissionError",
    "ParseError",
    "ShapeError",
    "StructureError",
    "TrainingDivergedError",
    "UndefinedMetricError",
    "UsageError",
]


class EcgTcnError(Exception):
    """Base class of all ecgtcn errors."""

    exit_code: ClassVar[int] = 2


class UsageError(EcgTcnError, ValueError):
    """An argument is outside its documented domain."""

    exit_code = 1


class DataError(EcgTcnError, ValueError):
    """Input data or a model file cannot be used."""

    exit_code = 2


class ParseError(DataError):
    """
    A dataset line cannot be parsed.

    Parameters
    ----------
    path : str
        The file being read.
    line_no : int
        One-based number of the offending line.
    reason : str
        What is wrong with the line.
    """

    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


class DomainError(DataError):
    """A value parsed fine but lies outside its valid range (e.g. a label of 7)."""


class ContainerError(DataError):
    """A model container is truncated, has bad magic, or an unsupported version."""


class CalibrationError(DataError):
    """Calibration data is empty or produced non-finite activation ranges."""


class ShapeError(EcgTcnError, ValueError):
    """Channel or length mismatch between a tensor and the layer consuming it."""

    exit_code = 2


class StructureError(EcgTcnError, ValueError):
    """A network or tile plan does not have the expected structure."""

    exit_code = 2


class UndefinedMetricError(EcgTcnError, ValueError):
    """A metric was requested on an empty confusion matrix."""

    exit_code = 2


class TrainingDivergedError(EcgTcnError, RuntimeError):
    """
    The training loss became non-finite.

    Parameters
    ----------
    epoch : int
        One-based epoch number.
    batch : int
        Zero-based batch index within the epoch.
    """

    exit_code = 3

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class CapacityError(EcgTcnError, RuntimeError):
    """A memory budget or an integer accumulator range cannot hold a layer."""

    exit_code = 4


class EmissionError(EcgTcnError, RuntimeError):
    """Source emission or compilation of an emitted bundle failed."""

    exit_code = 2
