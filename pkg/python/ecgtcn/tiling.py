"""
Two-level memory tiling.

Layers run one at a time with their full feature maps in a large, slow
memory (L2). A tile moves an input window into a small scratchpad (L1),
computes part of the output there and moves it back. Convolution tiles cut the
time axis and fetch ``dilation * (K - 1)`` halo columns to the left of their
output range; halos are fetched again for every tile. Residual adds are tiled
over time, the dense head over its flattened input features with int32
partial sums kept in L1.

With double buffering two tiles are in flight, so every tile buffer counts
twice against the budget. Weights, biases and requantization constants stay
resident in L1 for the whole layer.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Final

import numpy as np
from numpy.typing import NDArray

from .data import Beat
from .engine import (
    QFeatureMap,
    Step,
    buffer_channels,
    execution_schedule,
    qconv_valid,
    qrelu,
    qresidual_add,
    quantize_input,
)
from .errors import CapacityError, StructureError, UsageError
from .quantize import QConv, QDense, QNetwork, QResidualBlock

__all__ = [
    "LayerPlan",
    "Tile",
    "TilePlan",
    "execute_tiled",
    "format_plan",
    "parse_budget",
    "plan_key_values",
    "plan_tiles",
]

logger = logging.getLogger(__name__)

_BUDGET: Final = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([kKmM]i?[bB]?|[bB])?\s*$")
REQUANT_BYTES: Final = 8


def parse_budget(text: str | int) -> int:
    """
    Parse a byte budget such as ``8192``, ``"80kB"`` or ``"0.5MiB"``.

    Suffixes are binary: ``k`` is 1024 bytes, ``M`` is 1024**2.

    Examples
    --------
    >>> parse_budget("80kB")
    81920
    """
    if isinstance(text, int):
        value = text
    else:
        m = _BUDGET.match(text)
        if m is None:
            raise UsageError(f"cannot parse budget {text!r}")
        number, unit = m.groups()
        factor = {"k": 1024, "m": 1024**2}.get((unit or "b")[0].lower(), 1)
        value = int(float(number) * factor)
    if value < 1:
        raise UsageError(f"budget must be positive, got {text!r}")
    return value


@dataclass(frozen=True)
class Tile:
    """
    One tile; ranges are half-open.

    ``in_start`` may be negative for convolutions, meaning the leftmost columns
    are causal padding that is generated in L1 rather than transferred.
    """

    out_start: int
    out_end: int
    in_start: int
    in_end: int
    in_bytes: int
    out_bytes: int


@dataclass(frozen=True)
class LayerPlan:
    """
    Tiles of one schedule step.

    Attributes
    ----------
    name : str
        Step name, e.g. ``"blocks.1.conv2"`` or ``"blocks.1.add"``.
    kind : str
        ``"conv"``, ``"add"`` or ``"dense"``.
    extent : int
        Length of the tiled axis: time steps, or input features for dense.
    tile_len : int
        Output columns (features for dense) of every tile but possibly the last.
    working_set : int
        L1 bytes the layer needs at its tile length.
    weight_bytes : int
        Resident constants, transferred once.
    tiles : list[Tile]
        Tiles in execution order.
    """

    name: str
    kind: str
    extent: int
    tile_len: int
    working_set: int
    weight_bytes: int
    tiles: list[Tile] = field(default_factory=list)

    @property
    def bytes_in(self) -> int:
        return self.weight_bytes + sum(t.in_bytes for t in self.tiles)

    @property
    def bytes_out(self) -> int:
        return sum(t.out_bytes for t in self.tiles)


@dataclass(frozen=True)
class TilePlan:
    budget: int
    double_buffer: bool
    layers: list[LayerPlan] = field(default_factory=list)

    @property
    def peak_working_set(self) -> int:
        return max((lp.working_set for lp in self.layers), default=0)

    @property
    def bytes_l2_to_l1(self) -> int:
        return sum(lp.bytes_in for lp in self.layers)

    @property
    def bytes_l1_to_l2(self) -> int:
        return sum(lp.bytes_out for lp in self.layers)


def _plan_step(step: Step, channels: dict[str, int], t: int, budget: int, k: int) -> LayerPlan:
    # working set of an n-column tile: resident + k * (per_col * n + halo_bytes)
    layer = step.layer
    if isinstance(layer, QConv):
        extent = t
        resident = layer.weight.size + 4 * layer.bias.size + REQUANT_BYTES
        weights = resident
        per_col = layer.in_ch + layer.out_ch
        halo_bytes = layer.in_ch * layer.halo
    elif isinstance(layer, QResidualBlock):
        extent = t
        resident = weights = 2 * REQUANT_BYTES
        per_col = 2 * channels[step.inputs[0]]
        halo_bytes = 0
    elif isinstance(layer, QDense):
        extent = layer.in_features
        weights = 4 * layer.bias.size
        resident = weights + 4 * layer.out_features
        per_col = 1 + layer.out_features
        halo_bytes = 0
    else:
        raise StructureError(f"cannot tile step {step.name}")

    def ws(n: int) -> int:
        return resident + k * (per_col * n + halo_bytes)

    n = min(extent, ((budget - resident) // k - halo_bytes) // per_col)
    if n < 1:
        raise CapacityError(
            f"{step.name}: budget of {budget} bytes cannot hold one tile "
            f"(needs {ws(1)} bytes)"
        )

    tiles: list[Tile] = []
    for a in range(0, extent, n):
        b = min(a + n, extent)
        if isinstance(layer, QConv):
            lo = a - layer.halo
            real = b - max(lo, 0)
            tiles.append(Tile(a, b, lo, b, layer.in_ch * real, layer.out_ch * (b - a)))
        elif isinstance(layer, QResidualBlock):
            c = channels[step.inputs[0]]
            tiles.append(Tile(a, b, a, b, 2 * c * (b - a), c * (b - a)))
        else:
            assert isinstance(layer, QDense)
            last = b == extent
            out = 4 * layer.out_features if last else 0
            tiles.append(Tile(a, b, a, b, (1 + layer.out_features) * (b - a), out))
    plan = LayerPlan(step.name, step.kind, extent, n, ws(n), weights, tiles)
    logger.debug(
        "%s: %d tiles of %d, working set %d B", step.name, len(tiles), n, plan.working_set
    )
    return plan


def plan_tiles(qnet: QNetwork, l1_budget_bytes: int, double_buffer: bool = True) -> TilePlan:
    """
    Greedy maximal tiling of every schedule step under an L1 budget.

    Parameters
    ----------
    qnet : QNetwork
        The network.
    l1_budget_bytes : int
        Scratchpad capacity.
    double_buffer : bool
        Count two in-flight copies of every tile buffer.

    Returns
    -------
    TilePlan
        One `LayerPlan` per schedule step, each with the longest tile that fits.

    Raises
    ------
    CapacityError
        Naming the first layer whose minimal tile exceeds the budget.

    Examples
    --------
    >>> plan = plan_tiles(qnet, parse_budget("80kB"))
    >>> plan.peak_working_set <= 81920
    True
    """
    if l1_budget_bytes < 1:
        raise UsageError(f"budget must be positive, got {l1_budget_bytes}")
    k = 2 if double_buffer else 1
    channels = buffer_channels(qnet)
    t = qnet.cfg.input_len
    layers = [
        _plan_step(step, channels, t, l1_budget_bytes, k) for step in execution_schedule(qnet)
    ]
    plan = TilePlan(l1_budget_bytes, double_buffer, layers)
    logger.info(
        "tile plan: budget %d B, peak working set %d B, %d B in, %d B out",
        l1_budget_bytes, plan.peak_working_set, plan.bytes_l2_to_l1, plan.bytes_l1_to_l2,
    )
    return plan


def _check_plan(qnet: QNetwork, schedule: list[Step], plan: TilePlan) -> None:
    if [lp.name for lp in plan.layers] != [s.name for s in schedule]:
        raise StructureError("tile plan does not follow the network's schedule")
    for lp, step in zip(plan.layers, schedule):
        expected = qnet.dense.in_features if step.kind == "dense" else qnet.cfg.input_len
        cursor = 0
        for tile in lp.tiles:
            if tile.out_start != cursor or tile.out_end <= tile.out_start:
                raise StructureError(f"{lp.name}: tiles do not partition the output")
            cursor = tile.out_end
            if isinstance(step.layer, QConv) and tile.in_start != tile.out_start - step.layer.halo:
                raise StructureError(f"{lp.name}: tile input range misses the halo")
        if cursor != expected:
            raise StructureError(f"{lp.name}: tiles cover {cursor} of {expected}")


def execute_tiled(
    qnet: QNetwork, beat: Beat | NDArray[np.floating], plan: TilePlan
) -> NDArray[np.int32]:
    """
    Run one beat tile by tile as the plan prescribes.

    Returns
    -------
    ndarray
        int32 logits, bit-identical to `qpredict`.

    Raises
    ------
    StructureError
        If the plan does not belong to `qnet`.
    """
    schedule = execution_schedule(qnet)
    _check_plan(qnet, schedule, plan)
    edges = {"input": qnet.input_qp}
    bufs: dict[str, NDArray[np.int8]] = {"input": quantize_input(qnet, beat)}
    logits: NDArray[np.int64] | None = None

    for step, lp in zip(schedule, plan.layers):
        layer = step.layer
        if isinstance(layer, QConv):
            src = bufs[step.inputs[0]]
            zp = edges[step.inputs[0]].zero_point
            out = np.empty((layer.out_ch, src.shape[1]), dtype=np.int8)
            for tile in lp.tiles:
                window = src[:, max(tile.in_start, 0) : tile.in_end]
                if tile.in_start < 0:
                    window = np.pad(window, ((0, 0), (-tile.in_start, 0)), constant_values=zp)
                out[:, tile.out_start : tile.out_end] = qconv_valid(window, layer, zp)[0]
            bufs[step.output] = out
            edges[step.output] = layer.out_qp
        elif isinstance(layer, QResidualBlock):
            main, skip = step.inputs
            dst = bufs[main]
            for tile in lp.tiles:
                cols = slice(tile.out_start, tile.out_end)
                a = QFeatureMap(dst[:, cols], edges[main])
                b = QFeatureMap(bufs[skip][:, cols], edges[skip])
                summed = qresidual_add(a, b, layer.add_main, layer.add_skip, layer.out_qp)
                dst[:, cols] = qrelu(summed).data
            edges[main] = layer.out_qp
        else:
            assert isinstance(layer, QDense)
            flat = bufs[step.inputs[0]].reshape(-1)
            zp = edges[step.inputs[0]].zero_point
            acc = layer.bias.astype(np.int64)
            for tile in lp.tiles:
                chunk = flat[tile.out_start : tile.out_end].astype(np.int64) - zp
                w = layer.weight[:, tile.out_start : tile.out_end].astype(np.int64)
                acc = acc + w @ chunk
            logits = acc
    assert logits is not None
    return logits.astype(np.int32)


def format_plan(plan: TilePlan) -> str:
    """Human-readable summary, one row per layer."""
    lines = [
        f"L1 budget {plan.budget} B, double buffering {'on' if plan.double_buffer else 'off'}",
        f"peak working set {plan.peak_working_set} B",
        f"L2->L1 {plan.bytes_l2_to_l1} B, L1->L2 {plan.bytes_l1_to_l2} B",
        "",
        f"{'layer':<16}{'kind':>6}{'tiles':>7}{'tile len':>10}{'working set':>13}{'in B':>9}"
        f"{'out B':>8}",
    ]
    for lp in plan.layers:
        lines.append(
            f"{lp.name:<16}{lp.kind:>6}{len(lp.tiles):>7}{lp.tile_len:>10}{lp.working_set:>13}"
            f"{lp.bytes_in:>9}{lp.bytes_out:>8}"
        )
    return "\n".join(lines)


def plan_key_values(plan: TilePlan) -> str:
    """Machine-readable plan: global ``key=value`` lines, then one line per layer and tile."""
    lines = [
        f"budget={plan.budget}",
        f"double_buffer={int(plan.double_buffer)}",
        f"peak_working_set={plan.peak_working_set}",
        f"bytes_l2_to_l1={plan.bytes_l2_to_l1}",
        f"bytes_l1_to_l2={plan.bytes_l1_to_l2}",
    ]
    for lp in plan.layers:
        lines.append(
            f"layer name={lp.name} kind={lp.kind} tiles={len(lp.tiles)} tile_len={lp.tile_len} "
            f"working_set={lp.working_set} weight_bytes={lp.weight_bytes}"
        )
        for t in lp.tiles:
            lines.append(
                f"tile layer={lp.name} out={t.out_start}:{t.out_end} in={t.in_start}:{t.in_end} "
                f"in_bytes={t.in_bytes} out_bytes={t.out_bytes}"
            )
    return "\n".join(lines) + "\n"
