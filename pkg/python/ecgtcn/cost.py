"""
Parameter, MAC and memory accounting.

Conventions
-----------
* Parameters are learnable tensors only (weights, biases, batch-norm gamma
  and beta); running statistics are not counted.
* MACs are multiply-accumulates of convolutions and the dense head; biases,
  batch norm and residual adds are not counted. A zero-stuffed convolution
  pays for every tap of its ``d * (K - 1) + 1`` long kernel.
* Weight memory is int8 weights plus int32 biases plus the requantization
  tables (one ``(mult, shift)`` int32 pair per convolution, two per
  residual add). The int32 logits are not counted as activations.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Final

from .engine import buffer_channels, execution_schedule, zero_stuff
from .errors import UsageError
from .layers import BatchNormParams, Conv1DParams, DenseParams
from .network import Network
from .quantize import QConv, QDense, QNetwork

__all__ = [
    "PUBLISHED",
    "ArenaPlan",
    "CostReport",
    "LayerCost",
    "Lifetime",
    "MemoryFootprint",
    "PublishedFigures",
    "allocate_arena",
    "buffer_lifetimes",
    "cost_report",
    "count_macs",
    "count_params",
    "format_report",
    "memory_footprint",
    "peak_activation_bytes",
    "report_key_values",
]

logger = logging.getLogger(__name__)

REQUANT_BYTES: Final = 8


@dataclass(frozen=True)
class PublishedFigures:
    """Reference figures the ECG-TCN deployment was published with."""

    params: int = 14_883
    macs_native: int = 1_030_260
    macs_zero_stuffed: int = 2_339_994
    memory_native_kb: float = 26.63
    memory_zero_stuffed_kb: float = 35.86
    accuracy: float = 0.942
    balanced_accuracy: float = 0.890


PUBLISHED: Final = PublishedFigures()

Layer = Conv1DParams | BatchNormParams | DenseParams


def _layer_params(layer: Layer) -> int:
    if isinstance(layer, BatchNormParams):
        return layer.gamma.size + layer.beta.size
    return layer.weight.size + layer.bias.size


def count_params(net: Network | Iterable[Layer]) -> int:
    """
    Learnable parameters of a network or of a collection of layers.

    Examples
    --------
    >>> count_params(build_ecg_tcn())
    14859
    """
    if isinstance(net, Network):
        return sum(p.size for p in net.named_parameters().values())
    return sum(_layer_params(layer) for layer in net)


def _conv_shapes(model: Network | QNetwork) -> list[tuple[str, int, int, int, int]]:
    if isinstance(model, QNetwork):
        return [(c.name, c.out_ch, c.in_ch, c.kernel_len, c.dilation) for c in model.convs()]
    return [(n, c.out_ch, c.in_ch, c.kernel_len, c.dilation) for n, c in model.convs()]


def _macs(out_ch: int, in_ch: int, k: int, d: int, t: int, zero_stuffed: bool) -> int:
    k_eff = d * (k - 1) + 1 if zero_stuffed else k
    return out_ch * t * in_ch * k_eff


def count_macs(model: Network | QNetwork, mode: str = "native") -> int:
    """
    Multiply-accumulates of one inference.

    Parameters
    ----------
    model : Network or QNetwork
        The network; only its shapes matter.
    mode : {"native", "zero_stuffed"}
        Whether dilated kernels run natively or as zero-stuffed dense kernels.

    Raises
    ------
    UsageError
        If `mode` is neither of the two.
    """
    if mode not in ("native", "zero_stuffed"):
        raise UsageError(f"mode must be 'native' or 'zero_stuffed', got {mode!r}")
    t = model.cfg.input_len
    zs = mode == "zero_stuffed"
    dense = model.dense
    total = sum(_macs(o, i, k, d, t, zs) for _, o, i, k, d in _conv_shapes(model))
    return total + dense.in_features * dense.out_features


@dataclass(frozen=True)
class Lifetime:
    """A buffer is live from step `start` through step `end`, inclusive."""

    name: str
    size: int
    start: int
    end: int

    def overlaps(self, other: Lifetime) -> bool:
        return self.start <= other.end and other.start <= self.end


def buffer_lifetimes(qnet: QNetwork) -> list[Lifetime]:
    """
    Lifetimes of the int8 activation buffers over the execution schedule.

    The input buffer is live from step 0. A residual add writes in place into
    its main-branch buffer, extending that buffer's lifetime, and keeps the
    skip buffer live until the add.
    """
    schedule = execution_schedule(qnet)
    channels = buffer_channels(qnet)
    t = qnet.cfg.input_len
    spans: dict[str, list[int]] = {"input": [0, 0]}
    for s, step in enumerate(schedule):
        for name in step.inputs:
            spans[name][1] = s
        if step.output in channels:
            spans.setdefault(step.output, [s, s])[1] = s
    return [Lifetime(n, channels[n] * t, a, b) for n, (a, b) in spans.items()]


def peak_activation_bytes(lifetimes: list[Lifetime]) -> int:
    """Largest total size of simultaneously live buffers."""
    if not lifetimes:
        return 0
    last = max(lt.end for lt in lifetimes)
    return max(
        sum(lt.size for lt in lifetimes if lt.start <= s <= lt.end) for s in range(last + 1)
    )


@dataclass(frozen=True)
class ArenaPlan:
    """Byte offsets of every activation buffer inside one arena."""

    offsets: dict[str, int]
    sizes: dict[str, int]
    size: int


def allocate_arena(lifetimes: list[Lifetime]) -> ArenaPlan:
    """
    Greedy-by-size placement of buffers.

    Buffers are placed largest first (ties by creation step); each goes to the
    lowest offset that does not collide with an already placed buffer whose
    lifetime overlaps its own.
    """
    placed: list[tuple[Lifetime, int]] = []
    offsets: dict[str, int] = {}
    for lt in sorted(lifetimes, key=lambda x: (-x.size, x.start, x.name)):
        conflicts = sorted(
            ((off, off + other.size) for other, off in placed if other.overlaps(lt)),
        )
        offset = 0
        for lo, hi in conflicts:
            if offset + lt.size <= lo:
                break
            offset = max(offset, hi)
        placed.append((lt, offset))
        offsets[lt.name] = offset
    size = max((off + lt.size for lt, off in placed), default=0)
    return ArenaPlan(offsets, {lt.name: lt.size for lt in lifetimes}, size)


@dataclass(frozen=True)
class MemoryFootprint:
    weight_bytes: int
    peak_activation_bytes: int
    arena_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.weight_bytes + self.peak_activation_bytes


def _weight_bytes(layer: QConv | QDense) -> int:
    return layer.weight.size + 4 * layer.bias.size


def memory_footprint(qnet: QNetwork, zero_stuffed: bool = False) -> MemoryFootprint:
    """
    Bytes of constants and peak activations of a quantized network.

    Parameters
    ----------
    qnet : QNetwork
        The network.
    zero_stuffed : bool
        Count dilated kernels at their zero-stuffed length.
    """
    convs = [zero_stuff(c) if zero_stuffed else c for c in qnet.convs()]
    weights = sum(_weight_bytes(c) for c in convs) + _weight_bytes(qnet.dense)
    weights += REQUANT_BYTES * (len(convs) + 2 * len(qnet.blocks))
    lifetimes = buffer_lifetimes(qnet)
    return MemoryFootprint(
        weight_bytes=weights,
        peak_activation_bytes=peak_activation_bytes(lifetimes),
        arena_bytes=allocate_arena(lifetimes).size,
    )


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    macs_native: int
    macs_zero_stuffed: int
    receptive_field: int


@dataclass(frozen=True)
class CostReport:
    """
    Accounting summary of one network.

    Memory fields are ``None`` for float networks, which have no int8 layout.
    """

    params: int
    macs_native: int
    macs_zero_stuffed: int
    weight_bytes: int | None = None
    weight_bytes_zero_stuffed: int | None = None
    peak_activation_bytes: int | None = None
    arena_bytes: int | None = None
    layers: list[LayerCost] = field(default_factory=list)
    lifetimes: list[Lifetime] = field(default_factory=list)


_BN_OWNER: Final = {"bn1": "conv1", "bn2": "conv2", "skip_bn": "skip"}


def _layer_costs(model: Network | QNetwork) -> list[LayerCost]:
    t = model.cfg.input_len
    bn_params: dict[str, int] = {}
    if isinstance(model, Network):
        for name, bn in model.batchnorms():
            block, kind = name.rsplit(".", 1)
            bn_params[f"{block}.{_BN_OWNER[kind]}"] = 2 * bn.channels
    rows: list[LayerCost] = []
    rf = {"input": 1}
    for name, o, i, k, d in _conv_shapes(model):
        if name == "entry":
            src = "input"
        elif name.endswith(".conv2"):
            src = name.replace(".conv2", ".conv1")
        else:
            idx = int(name.split(".")[1])
            src = "entry" if idx == 0 else f"blocks.{idx - 1}.conv2"
        rf[name] = rf[src] + d * (k - 1)
        rows.append(
            LayerCost(
                name,
                o * i * k + o + bn_params.get(name, 0),
                _macs(o, i, k, d, t, False),
                _macs(o, i, k, d, t, True),
                rf[name],
            )
        )
    last = f"blocks.{len(model.blocks) - 1}.conv2" if model.blocks else "entry"
    dense = model.dense
    macs = dense.in_features * dense.out_features
    rows.append(LayerCost("dense", dense.weight.size + dense.bias.size, macs, macs, rf[last]))
    return rows


def cost_report(model: Network | QNetwork) -> CostReport:
    """Build the full accounting for a float or quantized network."""
    layers = _layer_costs(model)
    if isinstance(model, Network):
        return CostReport(
            params=count_params(model),
            macs_native=count_macs(model, "native"),
            macs_zero_stuffed=count_macs(model, "zero_stuffed"),
            layers=layers,
        )
    native = memory_footprint(model)
    stuffed = memory_footprint(model, zero_stuffed=True)
    logger.debug(
        "peak activations %d B, arena %d B", native.peak_activation_bytes, native.arena_bytes
    )
    return CostReport(
        params=model.float_param_count or sum(r.params for r in layers),
        macs_native=count_macs(model, "native"),
        macs_zero_stuffed=count_macs(model, "zero_stuffed"),
        weight_bytes=native.weight_bytes,
        weight_bytes_zero_stuffed=stuffed.weight_bytes,
        peak_activation_bytes=native.peak_activation_bytes,
        arena_bytes=native.arena_bytes,
        layers=layers,
        lifetimes=buffer_lifetimes(model),
    )


def _kb(n: int) -> str:
    return f"{n / 1024:.2f} kB"


def _delta(ours: float, ref: float) -> str:
    return f"{100.0 * (ours - ref) / ref:+.1f}%"


def format_report(report: CostReport) -> str:
    """Aligned text with the published figure beside every computed one."""
    ratio = report.macs_zero_stuffed / report.macs_native if report.macs_native else float("nan")
    ref_ratio = PUBLISHED.macs_zero_stuffed / PUBLISHED.macs_native
    rows: list[tuple[str, str, str, str]] = [
        ("parameters", f"{report.params:,}", f"{PUBLISHED.params:,}",
         _delta(report.params, PUBLISHED.params)),
        ("MACs (native dilation)", f"{report.macs_native:,}", f"{PUBLISHED.macs_native:,}",
         _delta(report.macs_native, PUBLISHED.macs_native)),
        ("MACs (zero-stuffed)", f"{report.macs_zero_stuffed:,}",
         f"{PUBLISHED.macs_zero_stuffed:,}",
         _delta(report.macs_zero_stuffed, PUBLISHED.macs_zero_stuffed)),
        ("zero-stuffed / native", f"{ratio:.3f}", f"{ref_ratio:.3f}", ""),
    ]
    if report.weight_bytes is not None and report.peak_activation_bytes is not None:
        assert report.weight_bytes_zero_stuffed is not None
        native = report.weight_bytes + report.peak_activation_bytes
        stuffed = report.weight_bytes_zero_stuffed + report.peak_activation_bytes
        rows += [
            ("weight bytes", f"{report.weight_bytes:,}", "", ""),
            ("peak activation bytes", f"{report.peak_activation_bytes:,}", "", ""),
            ("arena bytes", f"{report.arena_bytes:,}", "", ""),
            ("memory (native dilation)", _kb(native), f"{PUBLISHED.memory_native_kb:.2f} kB",
             _delta(native / 1024, PUBLISHED.memory_native_kb)),
            ("memory (zero-stuffed)", _kb(stuffed), f"{PUBLISHED.memory_zero_stuffed_kb:.2f} kB",
             _delta(stuffed / 1024, PUBLISHED.memory_zero_stuffed_kb)),
        ]
    lines = [f"{'':<26}{'computed':>14}{'published':>14}{'delta':>9}"]
    lines += [f"{a:<26}{b:>14}{c:>14}{d:>9}" for a, b, c, d in rows]
    lines += [
        "",
        "MACs count multiply-accumulates only; parameters exclude batch-norm running statistics.",
        "",
        f"{'layer':<16}{'params':>8}{'MACs':>11}{'MACs (zs)':>11}{'RF':>5}",
    ]
    lines += [
        f"{r.name:<16}{r.params:>8,}{r.macs_native:>11,}{r.macs_zero_stuffed:>11,}"
        f"{r.receptive_field:>5}"
        for r in report.layers
    ]
    if report.lifetimes:
        lines += ["", f"{'buffer':<16}{'bytes':>7}{'live steps':>12}"]
        for lt in report.lifetimes:
            lines.append(f"{lt.name:<16}{lt.size:>7}{f'{lt.start}..{lt.end}':>12}")
    return "\n".join(lines)


def report_key_values(report: CostReport) -> str:
    """One ``key=value`` line per figure, for scripts."""
    values: dict[str, object] = {
        "params": report.params,
        "macs_native": report.macs_native,
        "macs_zero_stuffed": report.macs_zero_stuffed,
        "macs_ratio": f"{report.macs_zero_stuffed / max(report.macs_native, 1):.4f}",
    }
    optional = (
        "weight_bytes", "weight_bytes_zero_stuffed", "peak_activation_bytes", "arena_bytes"
    )
    for key in optional:
        value = getattr(report, key)
        if value is not None:
            values[key] = value
    return "".join(f"{k}={v}\n" for k, v in values.items())
