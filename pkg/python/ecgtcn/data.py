"""
ECG5000 loading and splitting.

The UCR archive ships ECG5000 as two text files, ``ECG5000_TRAIN`` (500 beats)
and ``ECG5000_TEST`` (4500 beats). Each line is a label followed by 140
already-normalized samples. Releases differ in delimiter (comma, tab, runs of
spaces) and write labels as floats, so the loader accepts all of them.

The files are not bundled and never downloaded implicitly; get them from
https://www.timeseriesclassification.com/description.php?Dataset=ECG5000
"""

from __future__ import annotations

import logging
import re
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Final

import numpy as np
from numpy.typing import NDArray
from sklearn.model_selection import train_test_split

from .errors import DomainError, ParseError, UsageError

__all__ = [
    "CLASS_NAMES",
    "Beat",
    "Dataset",
    "load_ucr",
    "read_beats",
    "stratified_holdout",
]

logger = logging.getLogger(__name__)

CLASS_NAMES: Final = (
    "Normal (N)",
    "R-on-T PVC",
    "PVC",
    "SP or EB",
    "UB",
)

_DELIMITERS: Final = re.compile(r"[,\t ]+")


@dataclass(frozen=True, eq=False)
class Beat:
    """
    One heartbeat.

    Parameters
    ----------
    samples : NDArray[np.float64]
        Normalized amplitudes, one per time step.
    label : int
        Class label in ``1..5``.
    """

    samples: NDArray[np.float64]
    label: int

    def __post_init__(self) -> None:
        if not 1 <= self.label <= len(CLASS_NAMES):
            raise DomainError(f"label {self.label} outside 1..{len(CLASS_NAMES)}")

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.label - 1]


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    An ordered, immutable collection of equal-length beats.

    Parameters
    ----------
    beats : tuple[Beat, ...]
        Beats in file order.
    class_count : int
        Number of classes, 5 for ECG5000.
    class_names : tuple[str, ...]
        Human-readable class names indexed by ``label - 1``.
    """

    beats: tuple[Beat, ...]
    class_count: int = len(CLASS_NAMES)
    class_names: tuple[str, ...] = field(default=CLASS_NAMES)

    def __post_init__(self) -> None:
        lengths = {b.samples.shape[0] for b in self.beats}
        if len(lengths) > 1:
            raise DomainError(f"beats of unequal length: {sorted(lengths)}")
        for b in self.beats:
            if not 1 <= b.label <= self.class_count:
                raise DomainError(f"label {b.label} outside 1..{self.class_count}")

    @classmethod
    def from_arrays(cls, samples: NDArray[np.floating], labels: Sequence[int]) -> Dataset:
        """Build a dataset from an ``(N, T)`` sample matrix and N labels."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] != len(labels):
            raise UsageError(f"samples {samples.shape} do not match {len(labels)} labels")
        return cls(tuple(Beat(row.copy(), int(lab)) for row, lab in zip(samples, labels)))

    def __len__(self) -> int:
        return len(self.beats)

    def __iter__(self) -> Iterator[Beat]:
        return iter(self.beats)

    def __getitem__(self, index: int) -> Beat:
        return self.beats[index]

    @property
    def input_len(self) -> int:
        """Samples per beat, 0 for an empty dataset."""
        return self.beats[0].samples.shape[0] if self.beats else 0

    @cached_property
    def x(self) -> NDArray[np.float64]:
        """All samples as an ``(N, T)`` matrix."""
        if not self.beats:
            return np.zeros((0, 0))
        return np.stack([b.samples for b in self.beats])

    @cached_property
    def y(self) -> NDArray[np.int64]:
        """All labels as an ``(N,)`` vector (1-based)."""
        return np.fromiter((b.label for b in self.beats), dtype=np.int64, count=len(self.beats))

    def class_counts(self) -> dict[int, int]:
        """Number of beats per label, for every label ``1..class_count``."""
        counts = np.bincount(self.y, minlength=self.class_count + 1)
        return {k: int(counts[k]) for k in range(1, self.class_count + 1)}

    def subset(self, indices: Sequence[int] | NDArray[np.integer]) -> Dataset:
        """Beats at the given indices, in the given order."""
        return Dataset(
            tuple(self.beats[int(i)] for i in indices), self.class_count, self.class_names
        )


def _parse_line(path: str, line_no: int, line: str, n_fields: int) -> list[float]:
    fields = [f for f in _DELIMITERS.split(line.strip()) if f]
    if len(fields) != n_fields:
        raise ParseError(path, line_no, f"expected {n_fields} fields, found {len(fields)}")
    try:
        return [float(f) for f in fields]
    except ValueError as exc:
        raise ParseError(path, line_no, f"non-numeric field ({exc})") from None


def load_ucr(path: Path | str, expected_len: int = 140) -> Dataset:
    """
    Load a UCR-format text file.

    Parameters
    ----------
    path : Path or str
        File with one ``label, x0, ..., x{expected_len-1}`` record per line.
    expected_len : int
        Samples per record.

    Returns
    -------
    Dataset
        One beat per non-empty line, in file order.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ParseError
        If a line has the wrong field count or a non-numeric field.
    DomainError
        If a label is not an integer in ``1..5``.

    Examples
    --------
    >>> train = load_ucr("ECG5000/ECG5000_TRAIN.txt")
    >>> len(train), train.input_len
    (500, 140)
    """
    path = Path(path)
    beats: list[Beat] = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            values = _parse_line(str(path), line_no, line, expected_len + 1)
            label = values[0]
            if not (np.isfinite(label) and label == int(label) and 1 <= label <= len(CLASS_NAMES)):
                raise DomainError(f"{path}:{line_no}: label {label:g} outside 1..5")
            beats.append(Beat(np.asarray(values[1:], dtype=np.float64), int(label)))
    logger.debug("loaded %d beats from %s", len(beats), path)
    return Dataset(tuple(beats))


def read_beats(path: Path | str, expected_len: int = 140) -> list[NDArray[np.float64]]:
    """
    Read unlabeled beats for inference.

    Each non-empty line holds either ``expected_len`` samples or a UCR record
    (label first, which is ignored).
    """
    path = Path(path)
    beats: list[NDArray[np.float64]] = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            n = len([t for t in _DELIMITERS.split(line.strip()) if t])
            if n not in (expected_len, expected_len + 1):
                raise ParseError(
                    str(path), line_no, f"expected {expected_len} or {expected_len + 1} fields"
                )
            values = _parse_line(str(path), line_no, line, n)
            beats.append(np.asarray(values[n - expected_len :], dtype=np.float64))
    return beats


def stratified_holdout(ds: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """
    Split off a class-stratified holdout set.

    The holdout is drawn with a stratified ``train_test_split`` over the
    classes with at least two members, sized ``round(fraction * len(ds))``
    and raised to one beat per such class when needed. Afterwards every
    such class has at least one beat on each side. Singleton classes stay in
    the remaining part. Both partitions keep file order.

    Parameters
    ----------
    ds : Dataset
        The dataset to split.
    fraction : float
        Holdout share, strictly between 0 and 1.
    seed : int
        Seed selecting which members of each class are held out.

    Returns
    -------
    tuple[Dataset, Dataset]
        ``(remaining, holdout)``, disjoint and together equal to `ds`.

    Raises
    ------
    UsageError
        If `fraction` is outside (0, 1), would hold out no beat at all, or no
        class has two members.
    """
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"holdout fraction must lie in (0, 1), got {fraction}")
    if fraction * len(ds) < 1:
        raise UsageError(f"fraction {fraction} of {len(ds)} beats holds out nothing")

    labels = ds.y
    counts = np.bincount(labels, minlength=ds.class_count + 1)
    split_classes = np.flatnonzero(counts >= 2)
    if split_classes.size == 0:
        raise UsageError("no class has two members to split")
    splittable = np.flatnonzero(counts[labels] >= 2)

    n_held = int(np.floor(fraction * len(ds) + 0.5))
    n_held = min(max(n_held, split_classes.size), splittable.size - split_classes.size)
    _, held = train_test_split(
        splittable, test_size=n_held, stratify=labels[splittable], random_state=seed
    )
    held_mask = np.zeros(len(ds), dtype=bool)
    held_mask[held] = True

    # each split class keeps one member on both sides
    rng = np.random.default_rng(seed)
    for k in split_classes:
        members = np.flatnonzero(labels == k)
        inside = held_mask[members]
        if not inside.any():
            held_mask[rng.choice(members)] = True
        elif inside.all():
            held_mask[rng.choice(members)] = False
    logger.debug("held out %d of %d beats", int(held_mask.sum()), len(ds))
    return ds.subset(np.flatnonzero(~held_mask)), ds.subset(np.flatnonzero(held_mask))
