"""
Float layer kernels.

Feature maps are numpy arrays shaped ``(C, T)`` for one beat or ``(B, C, T)``
for a batch; every kernel here works on the batched form. Each forward kernel
has a matching ``*_backward`` returning input and parameter gradients, so the
network can be trained without an autograd framework.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .errors import ShapeError, UsageError

__all__ = [
    "BatchNormParams",
    "Conv1DParams",
    "DenseParams",
    "FeatureMap",
    "Mode",
    "as_batch",
    "batchnorm_backward",
    "batchnorm_fwd",
    "conv1d_backward",
    "conv1d_causal_dilated",
    "cross_entropy",
    "dense_backward",
    "dense_fwd",
    "dropout_fwd",
    "he_uniform_init",
    "relu",
]

Array = NDArray[np.floating]
FeatureMap = NDArray[np.floating]
Mode = Literal["train", "eval"]


def he_uniform_init(fan_in: int, count: int, rng: np.random.Generator) -> NDArray[np.float64]:
    """
    Draw `count` samples from U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).

    Parameters
    ----------
    fan_in : int
        Inputs feeding one output unit (``in_ch * K`` for a convolution).
    count : int
        Number of samples.
    rng : numpy.random.Generator
        Source of randomness.

    Raises
    ------
    UsageError
        If `fan_in` is below 1.
    """
    if fan_in < 1:
        raise UsageError(f"fan_in must be >= 1, got {fan_in}")
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=count)


def as_batch(x: Array) -> Array:
    """View ``(T,)`` or ``(C, T)`` input as a one-item batch; pass batches through."""
    x = np.asarray(x)
    if x.ndim == 1:
        return x[np.newaxis, np.newaxis, :]
    if x.ndim == 2:
        return x[np.newaxis]
    if x.ndim == 3:
        return x
    raise ShapeError(f"feature map must have 1 to 3 dimensions, got shape {x.shape}")


@dataclass(eq=False)
class Conv1DParams:
    """
    Causal dilated 1D convolution.

    Parameters
    ----------
    weight : ndarray
        ``(out_ch, in_ch, K)`` kernel; tap ``K - 1`` multiplies the current sample.
    bias : ndarray
        ``(out_ch,)`` bias.
    dilation : int
        Spacing between taps.
    causal : bool
        Left-pad by ``dilation * (K - 1)`` so output length equals input length.
    """

    weight: Array
    bias: Array
    dilation: int = 1
    causal: bool = True

    def __post_init__(self) -> None:
        if self.weight.ndim != 3 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"conv weight {self.weight.shape} and bias {self.bias.shape} do not match"
            )
        if self.dilation < 1:
            raise ShapeError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_len(self) -> int:
        return self.weight.shape[2]

    @property
    def halo(self) -> int:
        """Left context one output sample needs: ``dilation * (K - 1)``."""
        return self.dilation * (self.kernel_len - 1)


@dataclass(eq=False)
class BatchNormParams:
    """Per-channel batch normalization with running statistics."""

    gamma: Array
    beta: Array
    running_mean: Array
    running_var: Array
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def identity(
        cls, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype: str = "float64"
    ) -> BatchNormParams:
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass(eq=False)
class DenseParams:
    """Fully connected layer, ``weight`` shaped ``(out_features, in_features)``."""

    weight: Array
    bias: Array

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]


def _pad_causal(x: Array, amount: int) -> Array:
    if amount == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (amount, 0)))


def conv1d_causal_dilated(x: Array, p: Conv1DParams) -> Array:
    """
    Causal dilated convolution.

    ``y[b, c, t] = bias[c] + sum_{i, k} w[c, i, k] * xp[b, i, t + k * d]`` where
    ``xp`` is `x` left-padded with ``d * (K - 1)`` zeros, so ``y[..., t]`` only
    depends on inputs at times ``<= t``.

    Parameters
    ----------
    x : ndarray
        ``(C, T)`` or ``(B, C, T)`` input.
    p : Conv1DParams
        The layer.

    Returns
    -------
    ndarray
        Output with the same batch layout and length as `x`.

    Raises
    ------
    ShapeError
        If the channel count of `x` differs from ``p.in_ch``.
    """
    single = np.ndim(x) < 3
    xb = as_batch(x)
    if xb.shape[1] != p.in_ch:
        raise ShapeError(f"conv expects {p.in_ch} input channels, got {xb.shape[1]}")
    t_len = xb.shape[2]
    xp = _pad_causal(xb, p.halo) if p.causal else xb
    out_len = xp.shape[2] - p.halo
    y = np.broadcast_to(p.bias[None, :, None], (xb.shape[0], p.out_ch, out_len)).astype(
        np.result_type(xb, p.weight)
    )
    for k in range(p.kernel_len):
        start = k * p.dilation
        y += np.matmul(p.weight[:, :, k], xp[:, :, start : start + out_len])
    if p.causal:
        assert out_len == t_len
    return y[0] if single else y


def conv1d_backward(dy: Array, x: Array, p: Conv1DParams) -> tuple[Array, Array, Array]:
    """
    Gradients of `conv1d_causal_dilated`.

    Returns
    -------
    tuple of ndarray
        ``(dx, dweight, dbias)`` for a batched ``(B, C, T)`` input.
    """
    xp = _pad_causal(x, p.halo) if p.causal else x
    out_len = dy.shape[2]
    dxp = np.zeros_like(xp)
    dw = np.empty_like(p.weight)
    for k in range(p.kernel_len):
        start = k * p.dilation
        window = xp[:, :, start : start + out_len]
        dw[:, :, k] = np.einsum("bot,bit->oi", dy, window)
        dxp[:, :, start : start + out_len] += np.matmul(p.weight[:, :, k].T, dy)
    db = dy.sum(axis=(0, 2))
    dx = dxp[:, :, p.halo :] if p.causal else dxp
    return dx, dw, db


def batchnorm_fwd(
    x: Array, p: BatchNormParams, mode: Mode = "eval"
) -> tuple[Array, tuple[Array, Array] | None]:
    """
    Batch normalization over the batch and time axes.

    In ``"train"`` mode the batch statistics normalize the input and update
    the running statistics with ``p.momentum`` (unbiased variance). In
    ``"eval"`` mode the running statistics are used.

    Returns
    -------
    tuple
        The normalized output and, in train mode, the ``(x_hat, inv_std)``
        cache needed by `batchnorm_backward`.
    """
    xb = as_batch(x)
    if xb.shape[1] != p.channels:
        raise ShapeError(f"batch norm expects {p.channels} channels, got {xb.shape[1]}")
    if mode == "eval":
        inv_std = 1.0 / np.sqrt(p.running_var + p.eps)
        scale = (p.gamma * inv_std)[None, :, None]
        y = (xb - p.running_mean[None, :, None]) * scale + p.beta[None, :, None]
        return (y[0] if np.ndim(x) < 3 else y), None

    n = xb.shape[0] * xb.shape[2]
    mean = xb.mean(axis=(0, 2))
    var = xb.var(axis=(0, 2))
    inv_std = 1.0 / np.sqrt(var + p.eps)
    x_hat = (xb - mean[None, :, None]) * inv_std[None, :, None]
    y = x_hat * p.gamma[None, :, None] + p.beta[None, :, None]
    unbiased = var * n / max(n - 1, 1)
    p.running_mean[...] = (1 - p.momentum) * p.running_mean + p.momentum * mean
    p.running_var[...] = (1 - p.momentum) * p.running_var + p.momentum * unbiased
    return y, (x_hat, inv_std)


def batchnorm_backward(
    dy: Array, cache: tuple[Array, Array], p: BatchNormParams
) -> tuple[Array, Array, Array]:
    """Gradients of train-mode `batchnorm_fwd`: ``(dx, dgamma, dbeta)``."""
    x_hat, inv_std = cache
    n = dy.shape[0] * dy.shape[2]
    dgamma = (dy * x_hat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dx_hat = dy * p.gamma[None, :, None]
    dx = (
        inv_std[None, :, None]
        / n
        * (
            n * dx_hat
            - dx_hat.sum(axis=(0, 2))[None, :, None]
            - x_hat * (dx_hat * x_hat).sum(axis=(0, 2))[None, :, None]
        )
    )
    return dx, dgamma, dbeta


def dropout_fwd(
    x: Array, p: float, rng: np.random.Generator | None, mode: Mode = "eval"
) -> tuple[Array, Array | None]:
    """
    Element dropout.

    In train mode every scalar is zeroed with probability `p` and survivors
    are scaled by ``1 / (1 - p)``; eval mode and ``p == 0`` are the identity.

    Returns
    -------
    tuple
        The output and the scaled keep-mask (``None`` when nothing was dropped).

    Raises
    ------
    UsageError
        If train mode is asked for without `rng`.
    """
    if mode == "eval" or p == 0.0:
        return x, None
    if rng is None:
        raise UsageError("train-mode dropout needs a random generator")
    mask = (rng.random(np.shape(x)) >= p).astype(np.result_type(x)) / (1.0 - p)
    return x * mask, mask


def relu(x: Array) -> Array:
    return np.maximum(x, 0)


def dense_fwd(x: Array, p: DenseParams) -> Array:
    """Flatten a batch channel-major (index ``c * T + t``) and apply the dense layer."""
    xb = as_batch(x)
    flat = xb.reshape(xb.shape[0], -1)
    if flat.shape[1] != p.in_features:
        raise ShapeError(f"dense expects {p.in_features} features, got {flat.shape[1]}")
    return flat @ p.weight.T + p.bias


def dense_backward(dy: Array, x: Array, p: DenseParams) -> tuple[Array, Array, Array]:
    """Gradients of `dense_fwd` w.r.t. the unflattened input, weight and bias."""
    flat = x.reshape(x.shape[0], -1)
    dw = dy.T @ flat
    db = dy.sum(axis=0)
    dx = (dy @ p.weight).reshape(x.shape)
    return dx, dw, db


def cross_entropy(logits: Array, targets: NDArray[np.integer]) -> tuple[float, Array]:
    """
    Mean categorical cross-entropy and its gradient w.r.t. the logits.

    Parameters
    ----------
    logits : ndarray
        ``(B, n_classes)`` scores.
    targets : ndarray
        ``(B,)`` zero-based class indices.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    b = logits.shape[0]
    loss = float(-log_p[np.arange(b), targets].mean())
    grad = np.exp(log_p)
    grad[np.arange(b), targets] -= 1.0
    return loss, grad / b
