"""
Classification metrics.

Balanced accuracy is the macro average of per-class recall, taken over the
classes that have at least one true member in the evaluated set. For two
classes this equals (sensitivity + specificity) / 2; for five it is the usual
multiclass extension.
"""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from sklearn.metrics import accuracy_score, balanced_accuracy_score, confusion_matrix

from .errors import DomainError, UndefinedMetricError, UsageError

__all__ = ["ConfusionMatrix", "accuracy", "balanced_accuracy", "confusion"]


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """
    Square matrix of counts; rows are true classes, columns predicted ones.

    Row and column ``j`` belong to class label ``j + 1``.
    """

    counts: NDArray[np.int64]

    def __post_init__(self) -> None:
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise UsageError(f"confusion counts must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise UsageError("confusion counts must be non-negative")
        self.counts.setflags(write=False)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def format(self, class_names: Sequence[str] | None = None) -> str:
        """Aligned text rendering with true classes as rows."""
        names = list(class_names or [str(j + 1) for j in range(self.k)])
        width = max(8, *(len(n) for n in names))
        header = "true \\ pred".ljust(width) + "".join(f"{j + 1:>8}" for j in range(self.k))
        rows = [header]
        for j in range(self.k):
            cells = "".join(f"{int(c):>8}" for c in self.counts[j])
            rows.append(names[j].ljust(width) + cells)
        return "\n".join(rows)


def confusion(preds: Sequence[int], labels: Sequence[int], k: int = 5) -> ConfusionMatrix:
    """
    Count predictions per (true, predicted) class pair.

    Parameters
    ----------
    preds : Sequence[int]
        Predicted labels in ``1..k``.
    labels : Sequence[int]
        True labels in ``1..k``.
    k : int
        Number of classes.

    Returns
    -------
    ConfusionMatrix
        ``counts[t - 1, p - 1]`` is the number of items with label t predicted as p.

    Raises
    ------
    UsageError
        If the sequences differ in length.
    DomainError
        If a value lies outside ``1..k``.
    """
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape != t.shape:
        raise UsageError(f"{p.size} predictions for {t.size} labels")
    for name, v in (("prediction", p), ("label", t)):
        if v.size and (v.min() < 1 or v.max() > k):
            raise DomainError(f"{name} outside 1..{k}")
    if t.size == 0:
        return ConfusionMatrix(np.zeros((k, k), dtype=np.int64))
    counts = confusion_matrix(t, p, labels=np.arange(1, k + 1))
    return ConfusionMatrix(counts.astype(np.int64))


def _label_pairs(cm: ConfusionMatrix) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    """Expand counts back into (true, predicted) label vectors."""
    cells = np.repeat(np.arange(cm.k * cm.k), cm.counts.ravel())
    return cells // cm.k + 1, cells % cm.k + 1


def accuracy(cm: ConfusionMatrix) -> float:
    """
    Share of correctly classified items.

    Raises
    ------
    UndefinedMetricError
        If the matrix is empty.
    """
    if cm.total == 0:
        raise UndefinedMetricError("accuracy of an empty confusion matrix")
    labels, preds = _label_pairs(cm)
    return float(accuracy_score(labels, preds))


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """
    Macro-averaged recall over classes present in the evaluated set.

    Raises
    ------
    UndefinedMetricError
        If the matrix is empty.
    """
    if cm.total == 0:
        raise UndefinedMetricError("balanced accuracy of an empty confusion matrix")
    labels, preds = _label_pairs(cm)
    # predicted classes without true members are dropped from the average
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return float(balanced_accuracy_score(labels, preds))
