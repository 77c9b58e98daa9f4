"""
Integer-only inference.

Every kernel takes int8 feature maps shaped ``(C, T)`` or ``(B, C, T)`` and
accumulates in 64-bit integers, which is exact for the int32 bound checked at
quantization time. Requantization rounds half up:
``floor((acc * mult + 2**(shift - 1)) / 2**shift) + zp``, clamped to int8. The
emitted C code implements the same arithmetic, so both produce bit-identical
logits.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .data import Beat
from .errors import ShapeError
from .quantize import QConv, QDense, QNetwork, QResidualBlock, QuantParams, Requant

__all__ = [
    "QFeatureMap",
    "Step",
    "buffer_channels",
    "causal_pad",
    "execution_schedule",
    "qconv1d_dilated",
    "qconv_valid",
    "qdense",
    "qforward",
    "qpredict",
    "qpredict_batch",
    "qrelu",
    "qresidual_add",
    "quantize_input",
    "requantize",
    "zero_stuff",
]

logger = logging.getLogger(__name__)

Int8Array = NDArray[np.int8]


@dataclass(frozen=True, eq=False)
class QFeatureMap:
    """int8 feature map with its encoding."""

    data: Int8Array
    qp: QuantParams

    @property
    def channels(self) -> int:
        return self.data.shape[-2]

    @property
    def length(self) -> int:
        return self.data.shape[-1]

    def dequantize(self) -> NDArray[np.float64]:
        return self.qp.dequantize(self.data)


def _batched(data: NDArray[np.integer]) -> NDArray[np.integer]:
    if data.ndim == 2:
        return data[np.newaxis]
    if data.ndim != 3:
        raise ShapeError(f"feature map must be (C, T) or (B, C, T), got {data.shape}")
    return data


def causal_pad(x: QFeatureMap, amount: int) -> QFeatureMap:
    """Prepend `amount` columns holding the zero point (real 0)."""
    if amount < 0:
        raise ShapeError(f"pad amount must be >= 0, got {amount}")
    if amount == 0:
        return x
    widths = [(0, 0)] * (x.data.ndim - 1) + [(amount, 0)]
    return QFeatureMap(np.pad(x.data, widths, constant_values=x.qp.zero_point), x.qp)


def _scale(acc: NDArray[np.integer], r: Requant) -> NDArray[np.int64]:
    acc = np.asarray(acc, dtype=np.int64)
    return (acc * r.mult + (1 << (r.shift - 1))) >> r.shift


def requantize(acc: NDArray[np.integer] | int, r: Requant, zp_out: int) -> Int8Array:
    """
    Rescale int32 accumulators to int8.

    Examples
    --------
    >>> requantize(1000, Requant(2**30, 33), 0)
    array(125, dtype=int8)
    """
    return np.clip(_scale(np.asarray(acc), r) + zp_out, -128, 127).astype(np.int8)


def qconv_valid(xp: NDArray[np.integer], layer: QConv, zp_in: int) -> Int8Array:
    """
    Convolve an already padded ``(B, Cin, halo + n)`` window into ``(B, Cout, n)``.

    This is the kernel both the untiled and the tiled paths run.
    """
    xb = _batched(np.asarray(xp))
    if xb.shape[1] != layer.in_ch:
        raise ShapeError(f"{layer.name} expects {layer.in_ch} channels, got {xb.shape[1]}")
    out_len = xb.shape[2] - layer.halo
    if out_len < 1:
        raise ShapeError(f"{layer.name}: window of {xb.shape[2]} is shorter than the halo")
    centered = xb.astype(np.int64) - zp_in
    w = layer.weight.astype(np.int64)
    acc = np.broadcast_to(
        layer.bias.astype(np.int64)[None, :, None], (xb.shape[0], layer.out_ch, out_len)
    ).copy()
    for k in range(layer.kernel_len):
        start = k * layer.dilation
        acc += np.matmul(w[:, :, k], centered[:, :, start : start + out_len])
    y = requantize(acc, layer.requant, layer.out_qp.zero_point)
    if layer.relu:
        y = np.maximum(y, np.int8(layer.out_qp.zero_point))
    return y


def qconv1d_dilated(x: QFeatureMap, layer: QConv) -> QFeatureMap:
    """
    Causal dilated int8 convolution with int32 accumulation.

    ``acc[c, t] = bias[c] + sum_{i, k} w[c, i, k] * (xp[i, t + k * d] - zp_in)``
    on the causally padded input, followed by requantization (and the ReLU
    clamp for layers that carry one).

    Raises
    ------
    ShapeError
        If the channel count of `x` differs from the layer's.
    """
    single = x.data.ndim == 2
    padded = causal_pad(x, layer.halo)
    y = qconv_valid(padded.data, layer, x.qp.zero_point)
    return QFeatureMap(y[0] if single else y, layer.out_qp)


def zero_stuff(layer: QConv) -> QConv:
    """
    Rewrite a dilated layer as an undilated one with zeros between the taps.

    The kernel grows to ``d * (K - 1) + 1`` taps; bias and requantization
    are unchanged, so the output is bit-identical.
    """
    d = layer.dilation
    if d == 1:
        return layer
    o, i, k = layer.weight.shape
    stuffed = np.zeros((o, i, d * (k - 1) + 1), dtype=np.int8)
    stuffed[:, :, ::d] = layer.weight
    return replace(layer, weight=stuffed, dilation=1)


def qresidual_add(
    a: QFeatureMap, b: QFeatureMap, ra: Requant, rb: Requant, qp_out: QuantParams
) -> QFeatureMap:
    """
    Add two branches in the output encoding.

    Each branch is centered on its zero point and rescaled separately; the
    two are summed in integers before `qp_out.zero_point` is added and the
    result clamped.
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(f"residual branches differ in shape: {a.data.shape} vs {b.data.shape}")
    sa = _scale(a.data.astype(np.int64) - a.qp.zero_point, ra)
    sb = _scale(b.data.astype(np.int64) - b.qp.zero_point, rb)
    out = np.clip(sa + sb + qp_out.zero_point, -128, 127).astype(np.int8)
    return QFeatureMap(out, qp_out)


def qrelu(x: QFeatureMap) -> QFeatureMap:
    return QFeatureMap(np.maximum(x.data, np.int8(x.qp.zero_point)), x.qp)


def qdense(x: QFeatureMap, layer: QDense) -> NDArray[np.int32]:
    """int32 logits of a batch, flattening channel-major."""
    xb = _batched(x.data)
    flat = xb.reshape(xb.shape[0], -1).astype(np.int64) - x.qp.zero_point
    if flat.shape[1] != layer.in_features:
        raise ShapeError(f"dense expects {layer.in_features} features, got {flat.shape[1]}")
    logits = flat @ layer.weight.astype(np.int64).T + layer.bias.astype(np.int64)
    return logits.astype(np.int32)


@dataclass(frozen=True, eq=False)
class Step:
    """
    One entry of the execution schedule.

    ``kind`` is ``"conv"``, ``"add"`` (residual add plus ReLU, written in
    place into its first input) or ``"dense"``. Buffer names are ``input``,
    ``entry`` and ``blocks.{i}.h1|h2|skip``; the dense step writes ``logits``.
    """

    kind: Literal["conv", "add", "dense"]
    name: str
    inputs: tuple[str, ...]
    output: str
    layer: QConv | QResidualBlock | QDense


def execution_schedule(qnet: QNetwork) -> list[Step]:
    """Layer-at-a-time execution order shared by the engine, cost model, tiler and emitter."""
    steps = [Step("conv", "entry", ("input",), "entry", qnet.entry)]
    x = "entry"
    for i, b in enumerate(qnet.blocks):
        p = f"blocks.{i}"
        steps.append(Step("conv", b.conv1.name, (x,), f"{p}.h1", b.conv1))
        steps.append(Step("conv", b.conv2.name, (f"{p}.h1",), f"{p}.h2", b.conv2))
        skip = x
        if b.skip is not None:
            steps.append(Step("conv", b.skip.name, (x,), f"{p}.skip", b.skip))
            skip = f"{p}.skip"
        steps.append(Step("add", f"{p}.add", (f"{p}.h2", skip), f"{p}.h2", b))
        x = f"{p}.h2"
    steps.append(Step("dense", "dense", (x,), "logits", qnet.dense))
    return steps


def buffer_channels(qnet: QNetwork) -> dict[str, int]:
    """Channel count of every int8 buffer; all buffers span the full input length."""
    channels = {"input": 1}
    for step in execution_schedule(qnet):
        if isinstance(step.layer, QConv):
            channels[step.output] = step.layer.out_ch
    return channels


def qforward(
    qnet: QNetwork, x: NDArray[np.integer], native_dilation: bool = True
) -> NDArray[np.int32]:
    """
    Run the schedule on pre-quantized input.

    Parameters
    ----------
    qnet : QNetwork
        The network.
    x : ndarray
        int8 input shaped ``(T,)``, ``(1, T)`` or ``(B, 1, T)``.
    native_dilation : bool
        If False, dilated layers run zero-stuffed.

    Returns
    -------
    ndarray
        int32 logits, ``(n_classes,)`` for one beat or ``(B, n_classes)``.
    """
    data = np.asarray(x)
    single = data.ndim < 3
    if data.ndim == 1:
        data = data[np.newaxis]
    data = _batched(data).astype(np.int8)
    if data.shape[1:] != (1, qnet.cfg.input_len):
        raise ShapeError(f"expected input (1, {qnet.cfg.input_len}), got {data.shape[1:]}")

    bufs = {"input": QFeatureMap(data, qnet.input_qp)}
    logits: NDArray[np.int32] | None = None
    for step in execution_schedule(qnet):
        layer = step.layer
        if isinstance(layer, QConv):
            conv = layer if native_dilation else zero_stuff(layer)
            bufs[step.output] = qconv1d_dilated(bufs[step.inputs[0]], conv)
        elif isinstance(layer, QResidualBlock):
            a, b = (bufs[n] for n in step.inputs)
            bufs[step.output] = qrelu(
                qresidual_add(a, b, layer.add_main, layer.add_skip, layer.out_qp)
            )
        else:
            logits = qdense(bufs[step.inputs[0]], layer)
    assert logits is not None
    return logits[0] if single else logits


def quantize_input(qnet: QNetwork, beats: NDArray[np.floating] | Beat) -> Int8Array:
    """
    Encode raw beats with the network's input parameters.

    Returns
    -------
    ndarray
        ``(1, T)`` for one beat, ``(B, 1, T)`` for an ``(N, T)`` matrix.
    """
    samples = beats.samples if isinstance(beats, Beat) else np.asarray(beats, dtype=np.float64)
    if samples.shape[-1] != qnet.cfg.input_len:
        raise ShapeError(f"beat has {samples.shape[-1]} samples, expected {qnet.cfg.input_len}")
    q = qnet.input_qp.quantize(samples)
    return q[np.newaxis] if q.ndim == 1 else q[:, np.newaxis, :]


def qpredict(qnet: QNetwork, beat: Beat | NDArray[np.floating]) -> tuple[int, NDArray[np.int32]]:
    """
    Classify one beat.

    Returns
    -------
    tuple
        The 1-based class (ties go to the lowest class) and the int32 logits.
    """
    samples = beat.samples if isinstance(beat, Beat) else np.asarray(beat)
    if samples.ndim != 1:
        raise ShapeError(f"qpredict takes one beat, got shape {samples.shape}")
    logits = qforward(qnet, quantize_input(qnet, samples))
    return int(np.argmax(logits)) + 1, logits


def qpredict_batch(
    qnet: QNetwork, samples: NDArray[np.floating], batch_size: int = 500, jobs: int = 1
) -> tuple[NDArray[np.int64], NDArray[np.int32]]:
    """
    Classify an ``(N, T)`` sample matrix.

    Chunks may run on `jobs` threads; results are reassembled in input
    order, so the output does not depend on `jobs`.

    Returns
    -------
    tuple
        1-based predictions ``(N,)`` and int32 logits ``(N, n_classes)``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, qnet.cfg.n_classes), dtype=np.int32)
    chunks = [samples[i : i + batch_size] for i in range(0, len(samples), batch_size)]
    logger.debug("%d beats in %d chunks on %d threads", len(samples), len(chunks), max(jobs, 1))

    def run(chunk: NDArray[np.float64]) -> NDArray[np.int32]:
        return qforward(qnet, quantize_input(qnet, chunk))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    logits = np.concatenate(parts)
    return np.argmax(logits, axis=1).astype(np.int64) + 1, logits
