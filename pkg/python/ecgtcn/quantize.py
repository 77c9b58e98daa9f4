"""
Post-training INT-8 quantization.

The pipeline is `fold_batchnorm`, then `calibrate` over a calibration set,
then `quantize_network`. Weights are quantized per tensor and symmetric
(zero point 0); activations are asymmetric with an int8 zero point. Every
floating-point rescale ratio becomes a fixed-point `Requant` so the integer
engine and the emitted C code never touch floats.

All scales are rounded to float32 before anything is derived from them, so a
quantized network stored in a container reloads bit-identically.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass, field, replace
from typing import Final

import numpy as np
from numpy.typing import NDArray

from .config import ArchConfig
from .data import Dataset
from .errors import CalibrationError, CapacityError, StructureError
from .layers import Array, BatchNormParams, Conv1DParams
from .network import Network, ResidualBlock, forward_trace

__all__ = [
    "ACC_LIMIT",
    "QConv",
    "QDense",
    "QNetwork",
    "QResidualBlock",
    "QuantParams",
    "Requant",
    "calibrate",
    "fold_batchnorm",
    "quantize_multiplier",
    "quantize_network",
]

logger = logging.getLogger(__name__)

INT8_MIN: Final = -128
INT8_MAX: Final = 127
ACC_LIMIT: Final = 2**31
DEGENERATE_SPAN: Final = 1e-3

Ranges = dict[str, tuple[float, float]]


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class QuantParams:
    """
    Affine int8 encoding ``r = scale * (q - zero_point)``.

    Parameters
    ----------
    scale : float
        Positive real step between adjacent codes.
    zero_point : int
        Code of real zero, in ``-128..127``.
    """

    scale: float
    zero_point: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise CalibrationError(f"scale must be positive and finite, got {self.scale}")
        if not INT8_MIN <= self.zero_point <= INT8_MAX:
            raise CalibrationError(f"zero point {self.zero_point} outside int8")

    @classmethod
    def from_range(cls, lo: float, hi: float) -> QuantParams:
        """
        Asymmetric parameters covering ``[lo, hi]`` widened to contain 0.

        A degenerate range is widened by `DEGENERATE_SPAN` around its value.
        """
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise CalibrationError(f"non-finite activation range [{lo}, {hi}]")
        lo, hi = min(lo, 0.0), max(hi, 0.0)
        if hi <= lo:
            lo, hi = lo - DEGENERATE_SPAN / 2, hi + DEGENERATE_SPAN / 2
        scale = _f32((hi - lo) / 255.0)
        zp = int(np.clip(round(INT8_MIN - lo / scale), INT8_MIN, INT8_MAX))
        return cls(scale, zp)

    def quantize(self, r: Array) -> NDArray[np.int8]:
        q = np.rint(np.asarray(r, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)

    def dequantize(self, q: NDArray[np.integer]) -> NDArray[np.float64]:
        return (np.asarray(q, dtype=np.float64) - self.zero_point) * self.scale


@dataclass(frozen=True)
class Requant:
    """Fixed-point ratio ``mult * 2**-shift`` with ``mult`` in ``[2**30, 2**31)``."""

    mult: int
    shift: int

    @property
    def ratio(self) -> float:
        return math.ldexp(self.mult, -self.shift)


def quantize_multiplier(ratio: float) -> Requant:
    """
    Encode a positive real ratio as a `Requant`.

    Raises
    ------
    CalibrationError
        If the ratio is not positive and finite, or too small or too large
        for a shift in ``1..62``.

    Examples
    --------
    >>> quantize_multiplier(0.25)
    Requant(mult=1073741824, shift=32)
    """
    if not (math.isfinite(ratio) and ratio > 0):
        raise CalibrationError(f"rescale ratio must be positive and finite, got {ratio}")
    m, e = math.frexp(ratio)
    mult = round(m * 2**31)
    if mult == 2**31:
        mult //= 2
        e += 1
    shift = 31 - e
    if not 1 <= shift <= 62:
        raise CalibrationError(f"rescale ratio {ratio:g} not representable (shift {shift})")
    return Requant(mult, shift)


@dataclass(frozen=True, eq=False)
class QConv:
    """
    Integer causal dilated convolution.

    Parameters
    ----------
    name : str
        Layer name, e.g. ``"blocks.0.conv1"``.
    weight : ndarray
        ``(out_ch, in_ch, K)`` int8 kernel.
    bias : ndarray
        ``(out_ch,)`` int32 bias in units of ``in_qp.scale * weight_scale``.
    dilation : int
        Tap spacing.
    weight_scale : float
        Per-tensor weight scale.
    in_qp, out_qp : QuantParams
        Input and output encodings.
    requant : Requant
        ``in_qp.scale * weight_scale / out_qp.scale``.
    relu : bool
        Clamp the output at the encoding of real zero.
    """

    name: str
    weight: NDArray[np.int8]
    bias: NDArray[np.int32]
    dilation: int
    weight_scale: float
    in_qp: QuantParams
    out_qp: QuantParams
    requant: Requant
    relu: bool = False

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_len(self) -> int:
        return self.weight.shape[2]

    @property
    def halo(self) -> int:
        return self.dilation * (self.kernel_len - 1)

    def accumulator_bound(self) -> int:
        """Worst-case ``|acc|``: every input at ``-128 - zp`` against ``|w| = 127``."""
        return self.kernel_len * self.in_ch * 255 * 127 + int(np.abs(self.bias).max(initial=0))


@dataclass(frozen=True, eq=False)
class QResidualBlock:
    """
    Residual block; `add_main` and `add_skip` rescale each branch into `out_qp`.

    ``skip`` is ``None`` for an identity skip, in which case the skip branch
    is the block input.
    """

    conv1: QConv
    conv2: QConv
    skip: QConv | None
    add_main: Requant
    add_skip: Requant
    out_qp: QuantParams

    @property
    def in_qp(self) -> QuantParams:
        return self.conv1.in_qp

    @property
    def skip_qp(self) -> QuantParams:
        return self.skip.out_qp if self.skip is not None else self.in_qp


@dataclass(frozen=True, eq=False)
class QDense:
    """Integer dense head; logits are int32 in units of `logit_scale`."""

    weight: NDArray[np.int8]
    bias: NDArray[np.int32]
    weight_scale: float
    in_qp: QuantParams

    name: str = "dense"

    @property
    def logit_scale(self) -> float:
        return self.in_qp.scale * self.weight_scale

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def accumulator_bound(self) -> int:
        return self.in_features * 255 * 127 + int(np.abs(self.bias).max(initial=0))


@dataclass(frozen=True, eq=False)
class QNetwork:
    """
    INT-8 ECG-TCN with batch norm folded away.

    Parameters
    ----------
    cfg : ArchConfig
        Architecture of the float parent.
    input_qp : QuantParams
        Encoding applied to raw beats.
    entry : QConv
        1x1 entry convolution.
    blocks : list[QResidualBlock]
        Residual blocks in execution order.
    dense : QDense
        Classifier head.
    float_param_count : int
        Learnable parameters of the float parent, batch norm included.
    """

    cfg: ArchConfig
    input_qp: QuantParams
    entry: QConv
    blocks: list[QResidualBlock]
    dense: QDense
    float_param_count: int = 0
    metadata: dict[str, str] = field(default_factory=dict)

    def convs(self) -> Iterator[QConv]:
        yield self.entry
        for b in self.blocks:
            yield b.conv1
            yield b.conv2
            if b.skip is not None:
                yield b.skip

    def edges(self) -> dict[str, QuantParams]:
        """One encoding per activation edge, named as in `Trace.edges`."""
        edges = {"input": self.input_qp, "entry": self.entry.out_qp}
        for i, b in enumerate(self.blocks):
            edges[f"blocks.{i}.h1"] = b.conv1.out_qp
            edges[f"blocks.{i}.h2"] = b.conv2.out_qp
            if b.skip is not None:
                edges[f"blocks.{i}.skip"] = b.skip.out_qp
            edges[f"blocks.{i}.out"] = b.out_qp
        return edges

    def validate(self) -> None:
        """
        Check that no int32 accumulator can overflow.

        Raises
        ------
        CapacityError
            Naming the first layer whose worst-case accumulator reaches ``2**31``.
        """
        for layer in [*self.convs(), self.dense]:
            bound = layer.accumulator_bound()
            if bound >= ACC_LIMIT:
                raise CapacityError(
                    f"{layer.name}: worst-case accumulator {bound} overflows int32"
                )


def _fold(conv: Conv1DParams, bn: BatchNormParams | None) -> Conv1DParams:
    if bn is None:
        return replace(conv, weight=conv.weight.copy(), bias=conv.bias.copy())
    inv = bn.gamma / np.sqrt(bn.running_var + bn.eps)
    return replace(
        conv,
        weight=conv.weight * inv[:, None, None],
        bias=inv * (conv.bias - bn.running_mean) + bn.beta,
    )


def fold_batchnorm(net: Network) -> Network:
    """
    Absorb every batch norm into the convolution before it.

    ``w' = w * gamma / sqrt(var + eps)`` and
    ``b' = gamma * (b - mean) / sqrt(var + eps) + beta``, channel by channel.

    Parameters
    ----------
    net : Network
        Trained network with populated running statistics; not modified.

    Returns
    -------
    Network
        Eval-mode equivalent network without batch norm.

    Raises
    ------
    StructureError
        If a skip-branch batch norm has no skip convolution to fold into.
    """
    blocks: list[ResidualBlock] = []
    for i, b in enumerate(net.blocks):
        if b.skip_bn is not None and b.skip is None:
            raise StructureError(f"blocks.{i}.skip_bn is not preceded by a convolution")
        blocks.append(
            ResidualBlock(
                conv1=_fold(b.conv1, b.bn1),
                bn1=None,
                conv2=_fold(b.conv2, b.bn2),
                bn2=None,
                skip=_fold(b.skip, b.skip_bn) if b.skip is not None else None,
                skip_bn=None,
                dropout_p=b.dropout_p,
            )
        )
    folded = Network(
        cfg=net.cfg,
        entry=_fold(net.entry, None),
        blocks=blocks,
        dense=replace(net.dense, weight=net.dense.weight.copy(), bias=net.dense.bias.copy()),
    )
    logger.debug("folded %d batch norms", sum(1 for _ in net.batchnorms()))
    return folded


def calibrate(net: Network, calib: Dataset | Array, batch_size: int = 500) -> Ranges:
    """
    Record the min and max of every activation edge over a calibration set.

    Parameters
    ----------
    net : Network
        Folded (or eval-mode) network.
    calib : Dataset or ndarray
        Calibration beats, a dataset or an ``(N, T)`` matrix.
    batch_size : int
        Beats per forward pass.

    Returns
    -------
    dict[str, tuple[float, float]]
        ``(min, max)`` per edge name, over all beats, channels and time steps.

    Raises
    ------
    CalibrationError
        If the calibration set is empty.
    """
    x = calib.x if isinstance(calib, Dataset) else np.asarray(calib, dtype=np.float64)
    if len(x) == 0:
        raise CalibrationError("calibration set is empty")
    ranges: Ranges = {}
    for start in range(0, len(x), batch_size):
        trace = forward_trace(net, x[start : start + batch_size])
        for name, value in trace.edges().items():
            lo, hi = float(value.min()), float(value.max())
            if name in ranges:
                lo, hi = min(lo, ranges[name][0]), max(hi, ranges[name][1])
            ranges[name] = (lo, hi)
    logger.info("calibrated %d edges over %d beats", len(ranges), len(x))
    return ranges


def _quantize_weights(w: Array) -> tuple[NDArray[np.int8], float]:
    peak = float(np.abs(w).max(initial=0.0))
    scale = _f32(peak / INT8_MAX) if peak > 0 else 1.0
    if scale == 0.0:
        scale = 1.0
    q = np.clip(np.rint(np.asarray(w, dtype=np.float64) / scale), -INT8_MAX, INT8_MAX)
    return q.astype(np.int8), scale


def _quantize_bias(name: str, b: Array, scale: float) -> NDArray[np.int32]:
    q = np.rint(np.asarray(b, dtype=np.float64) / scale)
    if np.abs(q).max(initial=0) >= ACC_LIMIT:
        raise CapacityError(f"{name}: bias does not fit int32 at scale {scale:g}")
    return q.astype(np.int32)


def _qconv(
    name: str, conv: Conv1DParams, in_qp: QuantParams, out_qp: QuantParams, relu: bool
) -> QConv:
    weight, w_scale = _quantize_weights(conv.weight)
    acc_scale = in_qp.scale * w_scale
    layer = QConv(
        name=name,
        weight=weight,
        bias=_quantize_bias(name, conv.bias, acc_scale),
        dilation=conv.dilation,
        weight_scale=w_scale,
        in_qp=in_qp,
        out_qp=out_qp,
        requant=quantize_multiplier(acc_scale / out_qp.scale),
        relu=relu,
    )
    logger.info(
        "%-16s w_scale %.3e  out scale %.3e zp %4d  requant %d >> %d",
        name, w_scale, out_qp.scale, out_qp.zero_point, layer.requant.mult, layer.requant.shift,
    )
    return layer


def quantize_network(
    net: Network, ranges: Ranges, float_param_count: int | None = None
) -> QNetwork:
    """
    Quantize a folded network using calibrated activation ranges.

    Parameters
    ----------
    net : Network
        Output of `fold_batchnorm`.
    ranges : dict[str, tuple[float, float]]
        Output of `calibrate`; must cover every edge.
    float_param_count : int, optional
        Parameter count of the unfolded parent, recorded for reports.
        Defaults to the parameters of `net`.

    Returns
    -------
    QNetwork
        Validated integer network.

    Raises
    ------
    StructureError
        If `net` still contains batch norm.
    CalibrationError
        If an edge range is missing or non-finite.
    CapacityError
        If an accumulator could overflow.
    """
    if not net.folded:
        raise StructureError("fold batch norm before quantizing")

    def qp(edge: str) -> QuantParams:
        if edge not in ranges:
            raise CalibrationError(f"no calibration range for edge {edge}")
        return QuantParams.from_range(*ranges[edge])

    input_qp = qp("input")
    entry = _qconv("entry", net.entry, input_qp, qp("entry"), relu=False)
    blocks: list[QResidualBlock] = []
    x_qp = entry.out_qp
    for i, b in enumerate(net.blocks):
        prefix = f"blocks.{i}"
        conv1 = _qconv(f"{prefix}.conv1", b.conv1, x_qp, qp(f"{prefix}.h1"), relu=True)
        conv2 = _qconv(f"{prefix}.conv2", b.conv2, conv1.out_qp, qp(f"{prefix}.h2"), relu=False)
        skip = None
        if b.skip is not None:
            skip = _qconv(f"{prefix}.skip", b.skip, x_qp, qp(f"{prefix}.skip"), relu=False)
        out_qp = qp(f"{prefix}.out")
        skip_scale = skip.out_qp.scale if skip is not None else x_qp.scale
        blocks.append(
            QResidualBlock(
                conv1=conv1,
                conv2=conv2,
                skip=skip,
                add_main=quantize_multiplier(conv2.out_qp.scale / out_qp.scale),
                add_skip=quantize_multiplier(skip_scale / out_qp.scale),
                out_qp=out_qp,
            )
        )
        x_qp = out_qp

    weight, w_scale = _quantize_weights(net.dense.weight)
    dense = QDense(
        weight=weight,
        bias=_quantize_bias("dense", net.dense.bias, x_qp.scale * w_scale),
        weight_scale=w_scale,
        in_qp=x_qp,
    )
    if float_param_count is None:
        float_param_count = sum(p.size for p in net.named_parameters().values())
    qnet = QNetwork(net.cfg, input_qp, entry, blocks, dense, float_param_count)
    qnet.validate()
    return qnet
