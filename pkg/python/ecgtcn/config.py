"""
Architecture and training configuration.

`ArchConfig` holds the symbols of the ECG-TCN architecture (F1, FT, KT, L, the
dilation ladder), `TrainConfig` the optimizer schedule. Both are immutable and
validated on construction. `TrainConfigItems` mirrors `TrainConfig` as a
``TypedDict`` so functions can accept ``**kwargs`` overrides.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Final, Literal, TypedDict

if sys.version_info >= (3, 11):
    from typing import Unpack
else:
    from typing_extensions import Unpack

from .errors import ParseError, UsageError

__all__ = [
    "ArchConfig",
    "Precision",
    "TrainConfig",
    "TrainConfigItems",
    "load_config_file",
    "receptive_field",
    "resolve_train_config",
]

Precision = Literal["standard", "high"]

PRECISION_DTYPES: Final = {"standard": "float32", "high": "float64"}


def receptive_field(kernel_len: int, n_blocks: int) -> int:
    """
    Receptive field size of a stack of residual blocks.

    Each block holds two causal convolutions with dilation ``2**i``, so the
    field grows as ``1 + 2 * (K - 1) * (2**L - 1)``.

    Parameters
    ----------
    kernel_len : int
        Kernel length K, at least 1.
    n_blocks : int
        Number of residual blocks L, at least 0.

    Returns
    -------
    int
        Number of input samples that can influence one output sample.

    Examples
    --------
    >>> receptive_field(11, 3)
    141
    """
    if kernel_len < 1 or n_blocks < 0:
        raise UsageError(
            f"receptive_field needs K >= 1 and L >= 0, got K={kernel_len}, L={n_blocks}"
        )
    return 1 + 2 * (kernel_len - 1) * (2**n_blocks - 1)


@dataclass(frozen=True)
class ArchConfig:
    """
    ECG-TCN architecture.

    Parameters
    ----------
    input_len : int
        Samples per beat.
    f1 : int
        Filters of the entry 1x1 convolution.
    ft : int
        Filters of every residual block.
    kt : int
        Kernel length inside the residual blocks.
    n_blocks : int
        Number of residual blocks L.
    n_classes : int
        Output classes.
    dropout_p : float
        Element dropout probability between the two block convolutions.
    bn_eps : float
        Batch-norm epsilon.
    bn_momentum : float
        Batch-norm running-statistics momentum.
    check_receptive_field : bool
        Require the receptive field to cover the whole input.
    """

    input_len: int = 140
    f1: int = 2
    ft: int = 11
    kt: int = 11
    n_blocks: int = 3
    n_classes: int = 5
    dropout_p: float = 0.3
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    check_receptive_field: bool = True
    dilations: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        for name in ("input_len", "f1", "ft", "kt", "n_classes"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_blocks < 0:
            raise UsageError(f"n_blocks must be >= 0, got {self.n_blocks}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise UsageError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.bn_eps <= 0 or not 0.0 < self.bn_momentum <= 1.0:
            raise UsageError("bn_eps must be > 0 and bn_momentum in (0, 1]")
        object.__setattr__(self, "dilations", tuple(2**i for i in range(self.n_blocks)))
        if (
            self.check_receptive_field
            and self.n_blocks > 0
            and self.receptive_field < self.input_len
        ):
            raise UsageError(
                f"receptive field {self.receptive_field} does not cover input_len {self.input_len}"
            )

    @property
    def receptive_field(self) -> int:
        """Receptive field of the block stack."""
        return receptive_field(self.kt, self.n_blocks)

    @property
    def flat_features(self) -> int:
        """Length of the flattened feature vector feeding the dense head."""
        channels = self.ft if self.n_blocks > 0 else self.f1
        return channels * self.input_len

    def to_metadata(self) -> dict[str, str]:
        """Serialize as container metadata (``arch.`` prefixed keys)."""
        return {
            f"arch.{f.name}": str(getattr(self, f.name))
            for f in dataclasses.fields(self)
            if f.init
        }

    @classmethod
    def from_metadata(cls, meta: dict[str, str]) -> ArchConfig:
        """Inverse of `to_metadata`; unknown keys are ignored."""
        kwargs: dict[str, object] = {}
        for f in dataclasses.fields(cls):
            key = f"arch.{f.name}"
            if not f.init or key not in meta:
                continue
            kwargs[f.name] = _coerce(f.type, meta[key])
        return cls(**kwargs)  # type: ignore[arg-type]


class TrainConfigItems(TypedDict, total=False):
    """Keyword overrides accepted wherever a `TrainConfig` is."""

    batch_size: int
    lr: float
    epochs: int
    beta1: float
    beta2: float
    adam_eps: float
    seed: int
    precision: Precision


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer schedule.

    Defaults reproduce the published recipe: Adam, learning rate 0.001,
    batches of 30, 20 epochs.

    Parameters
    ----------
    batch_size : int
        Beats per optimizer step.
    lr : float
        Adam learning rate.
    epochs : int
        Passes over the training set; 0 returns the initialized network.
    beta1, beta2, adam_eps : float
        Adam moment decay rates and denominator epsilon.
    seed : int
        Seed of the shuffling and dropout generator.
    precision : {"standard", "high"}
        float32 or float64 arithmetic.
    """

    batch_size: int = 30
    lr: float = 0.001
    epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    precision: Precision = "standard"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise UsageError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise UsageError(f"epochs must be >= 0, got {self.epochs}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise UsageError("Adam betas must lie in [0, 1)")
        if self.precision not in PRECISION_DTYPES:
            raise UsageError(f"precision must be 'standard' or 'high', got {self.precision!r}")

    @property
    def dtype(self) -> str:
        """Numpy dtype name used for training arithmetic."""
        return PRECISION_DTYPES[self.precision]

    def to_metadata(self) -> dict[str, str]:
        """Serialize as container metadata (``train.`` prefixed keys)."""
        return {f"train.{f.name}": str(getattr(self, f.name)) for f in dataclasses.fields(self)}


def resolve_train_config(
    cfg: TrainConfig | None = None, **kwargs: Unpack[TrainConfigItems]
) -> TrainConfig:
    """
    Merge an optional `TrainConfig` with keyword overrides.

    Parameters
    ----------
    cfg : TrainConfig, optional
        Base configuration. If not provided, defaults are used.
    **kwargs : Unpack[TrainConfigItems]
        Field overrides.

    Returns
    -------
    TrainConfig
        The merged configuration.
    """
    if cfg is None:
        return TrainConfig(**kwargs)
    return dataclasses.replace(cfg, **kwargs) if kwargs else cfg


def load_config_file(path: Path | str) -> dict[str, str]:
    """
    Read a ``key=value`` configuration file.

    Blank lines and ``#`` comments are skipped; keys are normalized to use
    underscores so ``batch-size`` and ``batch_size`` are the same key.

    Parameters
    ----------
    path : Path or str
        The configuration file.

    Returns
    -------
    dict[str, str]
        Raw string values by normalized key.

    Raises
    ------
    ParseError
        If a non-comment line has no ``=``.
    """
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(str(path), line_no, "expected key=value")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(annotation: object, raw: str) -> object:
    kind = str(annotation)
    if "bool" in kind:
        return raw.strip().lower() in ("1", "true", "yes")
    if "int" in kind and "tuple" not in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw
