"""
The ECG-TCN network in floating point.

Layout::

    input (1 x T)
      -> entry 1x1 conv (F1)
      -> residual block i = 0..L-1, dilation 2**i:
             main: conv - BN - ReLU - dropout - conv - BN
             skip: 1x1 conv - BN when the depth changes, identity otherwise
             out = ReLU(main + skip)
      -> flatten (channel-major) -> dense (n_classes logits)

Forward passes return a `Trace` holding every intermediate tensor, which both
`backward` and activation calibration consume.
"""

from __future__ import annotations

import copy
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .config import ArchConfig
from .errors import ShapeError, UsageError
from .layers import (
    Array,
    BatchNormParams,
    Conv1DParams,
    DenseParams,
    Mode,
    as_batch,
    batchnorm_backward,
    batchnorm_fwd,
    conv1d_backward,
    conv1d_causal_dilated,
    cross_entropy,
    dense_backward,
    dense_fwd,
    dropout_fwd,
    he_uniform_init,
    relu,
)

__all__ = [
    "Gradients",
    "Network",
    "ResidualBlock",
    "Trace",
    "backward",
    "build_ecg_tcn",
    "forward",
    "forward_trace",
    "predict",
    "receptive_field_reach",
]

Gradients = dict[str, Array]


@dataclass(eq=False)
class ResidualBlock:
    """One residual block; BN fields are ``None`` once folded."""

    conv1: Conv1DParams
    bn1: BatchNormParams | None
    conv2: Conv1DParams
    bn2: BatchNormParams | None
    skip: Conv1DParams | None = None
    skip_bn: BatchNormParams | None = None
    dropout_p: float = 0.0

    @property
    def dilation(self) -> int:
        return self.conv1.dilation

    @property
    def in_ch(self) -> int:
        return self.conv1.in_ch

    @property
    def out_ch(self) -> int:
        return self.conv2.out_ch


@dataclass(eq=False)
class Network:
    """
    Float ECG-TCN.

    Parameters
    ----------
    cfg : ArchConfig
        The architecture this network realizes.
    entry : Conv1DParams
        Channel-expanding 1x1 convolution.
    blocks : list[ResidualBlock]
        Residual blocks in execution order.
    dense : DenseParams
        Classifier head on the flattened last feature map.
    """

    cfg: ArchConfig
    entry: Conv1DParams
    blocks: list[ResidualBlock]
    dense: DenseParams

    @property
    def folded(self) -> bool:
        """True when no batch-norm layer is left."""
        return all(b.bn1 is None and b.bn2 is None and b.skip_bn is None for b in self.blocks)

    @property
    def dtype(self) -> np.dtype:
        return self.entry.weight.dtype

    def convs(self) -> Iterator[tuple[str, Conv1DParams]]:
        """Every convolution with its parameter-name prefix, in execution order."""
        yield "entry", self.entry
        for i, b in enumerate(self.blocks):
            yield f"blocks.{i}.conv1", b.conv1
            yield f"blocks.{i}.conv2", b.conv2
            if b.skip is not None:
                yield f"blocks.{i}.skip", b.skip

    def batchnorms(self) -> Iterator[tuple[str, BatchNormParams]]:
        for i, b in enumerate(self.blocks):
            for name in ("bn1", "bn2", "skip_bn"):
                bn = getattr(b, name)
                if bn is not None:
                    yield f"blocks.{i}.{name}", bn

    def named_parameters(self) -> dict[str, Array]:
        """Learnable tensors by name; the arrays are the live parameters, not copies."""
        params: dict[str, Array] = {}
        for name, conv in self.convs():
            params[f"{name}.weight"] = conv.weight
            params[f"{name}.bias"] = conv.bias
        for name, bn in self.batchnorms():
            params[f"{name}.gamma"] = bn.gamma
            params[f"{name}.beta"] = bn.beta
        params["dense.weight"] = self.dense.weight
        params["dense.bias"] = self.dense.bias
        return params

    def named_buffers(self) -> dict[str, Array]:
        """Batch-norm running statistics by name."""
        buffers: dict[str, Array] = {}
        for name, bn in self.batchnorms():
            buffers[f"{name}.running_mean"] = bn.running_mean
            buffers[f"{name}.running_var"] = bn.running_var
        return buffers

    def copy(self) -> Network:
        return copy.deepcopy(self)

    def astype(self, dtype: str | np.dtype) -> Network:
        """Deep copy with every tensor cast to `dtype`."""
        net = self.copy()
        for _, conv in net.convs():
            conv.weight = conv.weight.astype(dtype)
            conv.bias = conv.bias.astype(dtype)
        for _, bn in net.batchnorms():
            for name in ("gamma", "beta", "running_mean", "running_var"):
                setattr(bn, name, getattr(bn, name).astype(dtype))
        net.dense.weight = net.dense.weight.astype(dtype)
        net.dense.bias = net.dense.bias.astype(dtype)
        return net


def _conv(
    rng: np.random.Generator, cin: int, cout: int, k: int, d: int, dtype: str
) -> Conv1DParams:
    w = he_uniform_init(cin * k, cout * cin * k, rng).reshape(cout, cin, k).astype(dtype)
    return Conv1DParams(weight=w, bias=np.zeros(cout, dtype=dtype), dilation=d)


def build_ecg_tcn(cfg: ArchConfig | None = None, seed: int = 0, dtype: str = "float64") -> Network:
    """
    Build a freshly initialized ECG-TCN.

    Weights are He-uniform, biases zero, batch norms the identity. Block 0
    gets a 1x1 skip convolution (plus BN) whenever ``F1 != FT``; the other
    blocks keep identity skips.

    Parameters
    ----------
    cfg : ArchConfig, optional
        Architecture; defaults to the published configuration.
    seed : int
        Initialization seed.
    dtype : str
        Parameter dtype.

    Returns
    -------
    Network
        The initialized network.

    Examples
    --------
    >>> net = build_ecg_tcn()
    >>> [b.dilation for b in net.blocks]
    [1, 2, 4]
    """
    cfg = cfg or ArchConfig()
    rng = np.random.default_rng(seed)
    entry = _conv(rng, 1, cfg.f1, 1, 1, dtype)
    blocks: list[ResidualBlock] = []
    in_ch = cfg.f1
    for d in cfg.dilations:
        conv1 = _conv(rng, in_ch, cfg.ft, cfg.kt, d, dtype)
        conv2 = _conv(rng, cfg.ft, cfg.ft, cfg.kt, d, dtype)
        skip = skip_bn = None
        if in_ch != cfg.ft:
            skip = _conv(rng, in_ch, cfg.ft, 1, 1, dtype)
            skip_bn = BatchNormParams.identity(cfg.ft, cfg.bn_eps, cfg.bn_momentum, dtype)
        blocks.append(
            ResidualBlock(
                conv1=conv1,
                bn1=BatchNormParams.identity(cfg.ft, cfg.bn_eps, cfg.bn_momentum, dtype),
                conv2=conv2,
                bn2=BatchNormParams.identity(cfg.ft, cfg.bn_eps, cfg.bn_momentum, dtype),
                skip=skip,
                skip_bn=skip_bn,
                dropout_p=cfg.dropout_p,
            )
        )
        in_ch = cfg.ft
    n_in = cfg.flat_features
    dense = DenseParams(
        weight=he_uniform_init(n_in, cfg.n_classes * n_in, rng)
        .reshape(cfg.n_classes, n_in)
        .astype(dtype),
        bias=np.zeros(cfg.n_classes, dtype=dtype),
    )
    return Network(cfg=cfg, entry=entry, blocks=blocks, dense=dense)


@dataclass(eq=False)
class BlockTrace:
    x: Array
    c1: Array
    bn1_cache: tuple[Array, Array] | None
    a1: Array
    h1: Array
    mask: Array | None
    h1_dropped: Array
    c2: Array
    bn2_cache: tuple[Array, Array] | None
    h2: Array
    skip_conv: Array | None
    skip_cache: tuple[Array, Array] | None
    s: Array
    z: Array
    out: Array


@dataclass(eq=False)
class Trace:
    """Intermediate tensors of one forward pass."""

    x: Array
    entry: Array
    blocks: list[BlockTrace] = field(default_factory=list)
    logits: Array | None = None

    def edges(self) -> dict[str, Array]:
        """Activation edges by name, the unit quantization assigns scales to."""
        edges = {"input": self.x, "entry": self.entry}
        for i, bt in enumerate(self.blocks):
            edges[f"blocks.{i}.h1"] = bt.h1
            edges[f"blocks.{i}.h2"] = bt.h2
            if bt.skip_conv is not None:
                edges[f"blocks.{i}.skip"] = bt.s
            edges[f"blocks.{i}.out"] = bt.out
        return edges

    def relu_gates(self) -> list[NDArray[np.bool_]]:
        """Boolean ReLU gates, used to detect non-differentiable perturbations."""
        gates: list[NDArray[np.bool_]] = []
        for bt in self.blocks:
            gates.append(bt.a1 > 0)
            gates.append(bt.z > 0)
        return gates


def _bn(
    x: Array, bn: BatchNormParams | None, mode: Mode
) -> tuple[Array, tuple[Array, Array] | None]:
    if bn is None:
        return x, None
    return batchnorm_fwd(x, bn, mode)


def forward_trace(
    net: Network, x: Array, mode: Mode = "eval", rng: np.random.Generator | None = None
) -> Trace:
    """
    Run the network and keep every intermediate tensor.

    Parameters
    ----------
    net : Network
        The network.
    x : ndarray
        ``(T,)``, ``(1, T)`` or ``(B, 1, T)`` input; a ``(B, T)`` matrix is
        read as a batch of single-channel beats.
    mode : {"train", "eval"}
        Batch-norm and dropout behavior.
    rng : numpy.random.Generator, optional
        Dropout randomness, required in train mode when dropout is enabled.
    """
    xb = np.asarray(x)
    if xb.ndim == 2 and xb.shape[0] != 1:
        xb = xb[:, np.newaxis, :]
    xb = as_batch(xb).astype(net.dtype, copy=False)
    if xb.shape[1] != 1 or xb.shape[2] != net.cfg.input_len:
        raise ShapeError(f"expected input (1, {net.cfg.input_len}), got {xb.shape[1:]}")

    trace = Trace(x=xb, entry=conv1d_causal_dilated(xb, net.entry))
    h = trace.entry
    for block in net.blocks:
        c1 = conv1d_causal_dilated(h, block.conv1)
        a1, bn1_cache = _bn(c1, block.bn1, mode)
        h1 = relu(a1)
        h1_dropped, mask = dropout_fwd(h1, block.dropout_p, rng, mode)
        c2 = conv1d_causal_dilated(h1_dropped, block.conv2)
        h2, bn2_cache = _bn(c2, block.bn2, mode)
        skip_conv = skip_cache = None
        if block.skip is not None:
            skip_conv = conv1d_causal_dilated(h, block.skip)
            s, skip_cache = _bn(skip_conv, block.skip_bn, mode)
        else:
            s = h
        z = h2 + s
        out = relu(z)
        trace.blocks.append(
            BlockTrace(
                h, c1, bn1_cache, a1, h1, mask, h1_dropped, c2, bn2_cache, h2, skip_conv,
                skip_cache, s, z, out,
            )
        )
        h = out
    trace.logits = dense_fwd(h, net.dense)
    return trace


def forward(
    net: Network, x: Array, mode: Mode = "eval", rng: np.random.Generator | None = None
) -> Array:
    """
    Logits for one beat or a batch.

    Returns
    -------
    ndarray
        ``(n_classes,)`` for a single beat, ``(B, n_classes)`` for a batch.
    """
    x = np.asarray(x)
    single = x.ndim == 1 or (x.ndim == 2 and x.shape[0] == 1)
    logits = forward_trace(net, x, mode, rng).logits
    assert logits is not None
    return logits[0] if single else logits


def predict(net: Network, samples: Array, batch_size: int = 500) -> NDArray[np.int64]:
    """Eval-mode class labels (1-based) for an ``(N, T)`` sample matrix."""
    samples = np.asarray(samples)
    preds = [
        np.argmax(forward_trace(net, samples[i : i + batch_size]).logits, axis=1) + 1
        for i in range(0, len(samples), batch_size)
    ]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _bn_back(
    dy: Array,
    cache: tuple[Array, Array] | None,
    bn: BatchNormParams | None,
    name: str,
    grads: Gradients,
) -> Array:
    if bn is None:
        return dy
    assert cache is not None
    dx, dgamma, dbeta = batchnorm_backward(dy, cache, bn)
    grads[f"{name}.gamma"] = dgamma
    grads[f"{name}.beta"] = dbeta
    return dx


def backward(
    net: Network,
    batch: Array,
    labels: NDArray[np.integer],
    rng: np.random.Generator | None = None,
    mode: Mode = "train",
) -> tuple[float, Gradients, Trace]:
    """
    Mean cross-entropy over a batch and its gradient for every parameter.

    Parameters
    ----------
    net : Network
        The network; train mode updates its batch-norm running statistics.
    batch : ndarray
        ``(B, T)`` or ``(B, 1, T)`` beats.
    labels : ndarray
        ``(B,)`` labels, 1-based.
    rng : numpy.random.Generator, optional
        Dropout randomness.
    mode : {"train", "eval"}
        ``"eval"`` is accepted only for folded networks (no batch norm left).

    Returns
    -------
    tuple
        ``(loss, gradients, trace)``; gradient names match `Network.named_parameters`.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ShapeError("backward needs a non-empty batch")
    if mode == "eval" and not net.folded:
        raise UsageError("eval-mode backward needs a network without batch norm")
    trace = forward_trace(net, batch, mode, rng)
    assert trace.logits is not None
    loss, dlogits = cross_entropy(trace.logits, labels - 1)

    grads: Gradients = {}
    last = trace.blocks[-1].out if trace.blocks else trace.entry
    dh, grads["dense.weight"], grads["dense.bias"] = dense_backward(dlogits, last, net.dense)

    for i in reversed(range(len(net.blocks))):
        block, bt = net.blocks[i], trace.blocks[i]
        prefix = f"blocks.{i}"
        dz = dh * (bt.z > 0)

        if block.skip is not None:
            ds = _bn_back(dz, bt.skip_cache, block.skip_bn, f"{prefix}.skip_bn", grads)
            dx_skip, dw, db = conv1d_backward(ds, bt.x, block.skip)
            grads[f"{prefix}.skip.weight"], grads[f"{prefix}.skip.bias"] = dw, db
        else:
            dx_skip = dz

        dc2 = _bn_back(dz, bt.bn2_cache, block.bn2, f"{prefix}.bn2", grads)
        dh1, dw, db = conv1d_backward(dc2, bt.h1_dropped, block.conv2)
        grads[f"{prefix}.conv2.weight"], grads[f"{prefix}.conv2.bias"] = dw, db
        if bt.mask is not None:
            dh1 = dh1 * bt.mask
        da1 = dh1 * (bt.a1 > 0)
        dc1 = _bn_back(da1, bt.bn1_cache, block.bn1, f"{prefix}.bn1", grads)
        dx_main, dw, db = conv1d_backward(dc1, bt.x, block.conv1)
        grads[f"{prefix}.conv1.weight"], grads[f"{prefix}.conv1.bias"] = dw, db
        dh = dx_main + dx_skip

    _, grads["entry.weight"], grads["entry.bias"] = conv1d_backward(dh, trace.x, net.entry)
    order = net.named_parameters()
    return loss, {name: grads[name] for name in order}, trace


def receptive_field_reach(
    net: Network, t0: int, seed: int = 0, eps: float = 1e-3
) -> tuple[int, int]:
    """
    Measure by perturbation how far an input sample reaches.

    Perturbs input sample `t0` of a random beat and compares the last
    feature map (before the dense head) in eval mode.

    Returns
    -------
    tuple[int, int]
        ``(earliest, latest)`` offsets ``t - t0`` at which any channel
        changed; ``earliest < 0`` would mean a causality violation.
        ``(0, -1)`` if nothing changed.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(net.cfg.input_len)
    x2 = x.copy()
    x2[t0] += eps
    a = forward_trace(net, x)
    b = forward_trace(net, x2)
    fa = a.blocks[-1].out if a.blocks else a.entry
    fb = b.blocks[-1].out if b.blocks else b.entry
    changed = np.flatnonzero(np.any(fa[0] != fb[0], axis=0))
    if changed.size == 0:
        return 0, -1
    return int(changed.min() - t0), int(changed.max() - t0)
