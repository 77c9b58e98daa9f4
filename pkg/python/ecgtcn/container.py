"""
The ``ETCN`` model container.

Layout, little-endian throughout::

    b"ETCN"  u32 version (1)
    u32 n  + n bytes UTF-8 metadata (key=value lines)
    u32 tensor count
    per tensor:
        u32 n + n bytes UTF-8 name
        u32 dtype code (0 real32, 1 int8, 2 int32)
        u32 rank, rank * u32 dims
        raw data, C order

Float networks store every parameter and running statistic as real32.
Quantized networks (metadata ``quantized=1``) store int8 weights, int32
biases, ``(mult, shift)`` int32 pairs and the real32 scale and int32 zero
point of every activation edge.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Final

import numpy as np
from numpy.typing import NDArray

from .config import ArchConfig
from .errors import ContainerError
from .network import Network, build_ecg_tcn
from .quantize import QConv, QDense, QNetwork, QResidualBlock, QuantParams, Requant

__all__ = [
    "MAGIC",
    "VERSION",
    "Container",
    "load_model",
    "read_container",
    "save_model",
    "write_container",
]

logger = logging.getLogger(__name__)

MAGIC: Final = b"ETCN"
VERSION: Final = 1

_CODES: Final = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("<i4")}
_DTYPES: Final = {np.dtype(np.float32): 0, np.dtype(np.int8): 1, np.dtype(np.int32): 2}


@dataclass(eq=False)
class Container:
    metadata: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, NDArray] = field(default_factory=dict)

    @property
    def quantized(self) -> bool:
        return self.metadata.get("quantized", "0") == "1"


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def write_container(path: Path | str, container: Container) -> None:
    """Write `container`; tensor dtypes must be float32, int8 or int32."""
    meta = "".join(f"{k}={v}\n" for k, v in container.metadata.items()).encode("utf-8")
    parts = [MAGIC, _u32(VERSION), _u32(len(meta)), meta, _u32(len(container.tensors))]
    for name, array in container.tensors.items():
        array = np.asarray(array)
        if array.dtype not in _DTYPES:
            raise ContainerError(f"tensor {name} has unsupported dtype {array.dtype}")
        raw_name = name.encode("utf-8")
        parts += [_u32(len(raw_name)), raw_name, _u32(_DTYPES[array.dtype]), _u32(array.ndim)]
        parts += [_u32(d) for d in array.shape]
        parts.append(np.ascontiguousarray(array, dtype=_CODES[_DTYPES[array.dtype]]).tobytes())
    Path(path).write_bytes(b"".join(parts))
    logger.debug("wrote %d tensors to %s", len(container.tensors), path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError("bad magic/length: container is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"bad magic/length: invalid UTF-8 ({exc})") from None


def read_container(path: Path | str) -> Container:
    """
    Parse a container file.

    Raises
    ------
    ContainerError
        On bad magic, truncation, trailing bytes, an unknown version or dtype.
    """
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise ContainerError(f"bad magic/length: {path} is not an ETCN container")
    version = r.u32()
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    metadata: dict[str, str] = {}
    for line in r.text().splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    tensors: dict[str, NDArray] = {}
    for _ in range(r.u32()):
        name = r.text()
        code = r.u32()
        if code not in _CODES:
            raise ContainerError(f"tensor {name} has unknown dtype code {code}")
        dims = tuple(r.u32() for _ in range(r.u32()))
        dtype = _CODES[code]
        count = int(np.prod(dims, dtype=np.int64))
        buf = r.take(count * dtype.itemsize)
        native = dtype.newbyteorder("=")
        tensors[name] = np.frombuffer(buf, dtype=dtype).reshape(dims).astype(native)
    if r.pos != len(r.data):
        raise ContainerError("bad magic/length: trailing bytes after the tensor table")
    return Container(metadata, tensors)


def _scalar(x: float | int, dtype: type) -> NDArray:
    return np.asarray([x], dtype=dtype)


def _requant(r: Requant) -> NDArray[np.int32]:
    return np.asarray([r.mult, r.shift], dtype=np.int32)


def _network_container(net: Network, metadata: dict[str, str]) -> Container:
    tensors = {
        name: np.asarray(a, dtype=np.float32)
        for name, a in {**net.named_parameters(), **net.named_buffers()}.items()
    }
    meta = {"quantized": "0", "folded": str(int(net.folded)), **net.cfg.to_metadata(), **metadata}
    return Container(meta, tensors)


def _qnetwork_container(qnet: QNetwork, metadata: dict[str, str]) -> Container:
    tensors: dict[str, NDArray] = {}
    for edge, qp in qnet.edges().items():
        tensors[f"edge.{edge}.scale"] = _scalar(qp.scale, np.float32)
        tensors[f"edge.{edge}.zero_point"] = _scalar(qp.zero_point, np.int32)
    for conv in qnet.convs():
        tensors[f"{conv.name}.weight"] = conv.weight
        tensors[f"{conv.name}.bias"] = conv.bias
        tensors[f"{conv.name}.weight_scale"] = _scalar(conv.weight_scale, np.float32)
        tensors[f"{conv.name}.requant"] = _requant(conv.requant)
    for i, b in enumerate(qnet.blocks):
        tensors[f"blocks.{i}.add.requant"] = np.stack([_requant(b.add_main), _requant(b.add_skip)])
    tensors["dense.weight"] = qnet.dense.weight
    tensors["dense.bias"] = qnet.dense.bias
    tensors["dense.weight_scale"] = _scalar(qnet.dense.weight_scale, np.float32)
    meta = {
        "quantized": "1",
        "float_param_count": str(qnet.float_param_count),
        **qnet.cfg.to_metadata(),
        **qnet.metadata,
        **metadata,
    }
    return Container(meta, tensors)


def save_model(
    path: Path | str, model: Network | QNetwork, metadata: dict[str, str] | None = None
) -> None:
    """
    Store a float or quantized network.

    Parameters
    ----------
    path : Path or str
        Output file.
    model : Network or QNetwork
        The network to store.
    metadata : dict[str, str], optional
        Extra key=value provenance, e.g. training configuration.
    """
    extra = dict(metadata or {})
    if isinstance(model, QNetwork):
        container = _qnetwork_container(model, extra)
    else:
        container = _network_container(model, extra)
    write_container(path, container)
    logger.info("saved %s model to %s", "quantized" if container.quantized else "float", path)


def _get(tensors: dict[str, NDArray], name: str, shape: tuple[int, ...] | None = None) -> NDArray:
    if name not in tensors:
        raise ContainerError(f"container lacks tensor {name}")
    array = tensors[name]
    if shape is not None and array.shape != shape:
        raise ContainerError(f"tensor {name} has shape {array.shape}, expected {shape}")
    return array


def _load_network(c: Container, cfg: ArchConfig) -> Network:
    net = build_ecg_tcn(cfg)
    if c.metadata.get("folded") == "1":
        for b in net.blocks:
            b.bn1 = b.bn2 = b.skip_bn = None
    for name, live in {**net.named_parameters(), **net.named_buffers()}.items():
        live[...] = _get(c.tensors, name, live.shape)
    return net


def _load_qnetwork(c: Container, cfg: ArchConfig) -> QNetwork:
    t = c.tensors

    def qp(edge: str) -> QuantParams:
        scale = _get(t, f"edge.{edge}.scale", (1,))
        zp = _get(t, f"edge.{edge}.zero_point", (1,))
        return QuantParams(float(scale[0]), int(zp[0]))

    def requant(a: NDArray) -> Requant:
        return Requant(int(a[0]), int(a[1]))

    def conv(
        name: str, in_qp: QuantParams, out_qp: QuantParams, dilation: int, relu: bool
    ) -> QConv:
        return QConv(
            name=name,
            weight=_get(t, f"{name}.weight"),
            bias=_get(t, f"{name}.bias"),
            dilation=dilation,
            weight_scale=float(_get(t, f"{name}.weight_scale", (1,))[0]),
            in_qp=in_qp,
            out_qp=out_qp,
            requant=requant(_get(t, f"{name}.requant", (2,))),
            relu=relu,
        )

    input_qp = qp("input")
    entry = conv("entry", input_qp, qp("entry"), 1, relu=False)
    blocks: list[QResidualBlock] = []
    x_qp = entry.out_qp
    for i, d in enumerate(cfg.dilations):
        p = f"blocks.{i}"
        c1 = conv(f"{p}.conv1", x_qp, qp(f"{p}.h1"), d, relu=True)
        c2 = conv(f"{p}.conv2", c1.out_qp, qp(f"{p}.h2"), d, relu=False)
        skip = None
        if f"{p}.skip.weight" in t:
            skip = conv(f"{p}.skip", x_qp, qp(f"{p}.skip"), 1, relu=False)
        add = _get(t, f"{p}.add.requant", (2, 2))
        blocks.append(
            QResidualBlock(c1, c2, skip, requant(add[0]), requant(add[1]), qp(f"{p}.out"))
        )
        x_qp = blocks[-1].out_qp
    dense = QDense(
        weight=_get(t, "dense.weight", (cfg.n_classes, cfg.flat_features)),
        bias=_get(t, "dense.bias", (cfg.n_classes,)),
        weight_scale=float(_get(t, "dense.weight_scale", (1,))[0]),
        in_qp=x_qp,
    )
    provenance = {k: v for k, v in c.metadata.items() if not k.startswith("arch.")}
    qnet = QNetwork(
        cfg, input_qp, entry, blocks, dense,
        float_param_count=int(c.metadata.get("float_param_count", "0")),
        metadata=provenance,
    )
    qnet.validate()
    return qnet


def load_model(path: Path | str) -> Network | QNetwork:
    """
    Load whichever kind of network a container holds.

    Returns
    -------
    Network or QNetwork
        A float network (float64 parameters) or a quantized one, according
        to the ``quantized`` metadata flag.

    Raises
    ------
    ContainerError
        If the file is malformed or does not match its architecture metadata.
    """
    c = read_container(path)
    try:
        cfg = ArchConfig.from_metadata(c.metadata)
    except ValueError as exc:
        raise ContainerError(f"bad architecture metadata: {exc}") from None
    model = _load_qnetwork(c, cfg) if c.quantized else _load_network(c, cfg)
    logger.debug("loaded %s model from %s", "quantized" if c.quantized else "float", path)
    return model
