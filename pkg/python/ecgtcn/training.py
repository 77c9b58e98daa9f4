"""
Adam training with validation-based model selection.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    from typing import Unpack
else:
    from typing_extensions import Unpack

import numpy as np

from .config import TrainConfig, TrainConfigItems, resolve_train_config
from .data import Dataset
from .errors import TrainingDivergedError, UsageError
from .layers import Array
from .metrics import accuracy, balanced_accuracy, confusion
from .network import Gradients, Network, backward, predict

__all__ = ["AdamState", "EpochRecord", "TrainResult", "adam_step", "evaluate", "train"]

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: dict[str, Array]
    v: dict[str, Array]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, Array]) -> AdamState:
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, Array], grads: Gradients, state: AdamState, cfg: TrainConfig
) -> None:
    """
    One bias-corrected Adam update, applied to `params` in place.

    Parameters
    ----------
    params : dict[str, ndarray]
        Live parameter arrays (see `Network.named_parameters`).
    grads : dict[str, ndarray]
        Gradients with the same names and shapes.
    state : AdamState
        Moment estimates, updated in place.
    cfg : TrainConfig
        Learning rate, betas and epsilon.
    """
    state.step += 1
    c1 = 1.0 - cfg.beta1**state.step
    c2 = 1.0 - cfg.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise UsageError(f"gradient {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)).astype(p.dtype, copy=False)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    val_accuracy: float
    val_balanced_accuracy: float


@dataclass(eq=False)
class TrainResult:
    """
    Outcome of `train`.

    Attributes
    ----------
    network : Network
        Snapshot of the epoch with the best validation accuracy.
    history : list[EpochRecord]
        One record per epoch.
    best_epoch : int
        Epoch of the returned snapshot, 0 when no epoch ran.
    """

    network: Network
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def evaluate(net: Network, ds: Dataset) -> tuple[float, float]:
    """Eval-mode ``(accuracy, balanced_accuracy)`` of `net` on `ds`."""
    cm = confusion(predict(net, ds.x), ds.y, ds.class_count)
    return accuracy(cm), balanced_accuracy(cm)


def train(
    net: Network,
    train_ds: Dataset,
    val_ds: Dataset,
    cfg: TrainConfig | None = None,
    **kwargs: Unpack[TrainConfigItems],
) -> TrainResult:
    """
    Train with Adam on shuffled mini-batches and keep the best validation epoch.

    Parameters
    ----------
    net : Network
        Initialized network; it is not modified.
    train_ds : Dataset
        Training beats.
    val_ds : Dataset
        Validation beats used for model selection.
    cfg : TrainConfig, optional
        Training configuration. If not provided, default settings are used.
    **kwargs : Unpack[TrainConfigItems]
        Overrides applied on top of `cfg`.

    Returns
    -------
    TrainResult
        Best snapshot (earliest epoch on ties) and per-epoch history.

    Raises
    ------
    UsageError
        If a dataset is empty.
    TrainingDivergedError
        If a batch loss is not finite.

    Examples
    --------
    >>> result = train(build_ecg_tcn(), train_ds, val_ds, epochs=20, seed=1)
    >>> result.best_epoch, result.history[-1].val_accuracy
    """
    cfg = resolve_train_config(cfg, **kwargs)
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise UsageError("training and validation sets must be non-empty")
    if cfg.epochs == 0:
        return TrainResult(network=net.copy())

    work = net.astype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    params = work.named_parameters()
    state = AdamState.zeros_like(params)
    x = train_ds.x.astype(cfg.dtype)
    y = train_ds.y

    result = TrainResult(network=work.copy())
    best_acc = -1.0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_ds))
        losses: list[float] = []
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            loss, grads, _ = backward(work, x[idx], y[idx], rng)
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingDivergedError(epoch, batch_no)
            logger.debug("epoch %d batch %d loss %.5f", epoch, batch_no, loss)
            adam_step(params, grads, state, cfg)
            losses.append(loss)

        val_acc, val_bal = evaluate(work, val_ds)
        record = EpochRecord(epoch, float(np.mean(losses)), val_acc, val_bal)
        result.history.append(record)
        logger.info(
            "epoch %2d  loss %.4f  val acc %.4f  val bal acc %.4f",
            epoch, record.loss, val_acc, val_bal,
        )
        if val_acc > best_acc:
            best_acc = val_acc
            result.network = work.copy()
            result.best_epoch = epoch

    logger.info("selected epoch %d (val acc %.4f)", result.best_epoch, best_acc)
    return result
