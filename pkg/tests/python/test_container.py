"""
Tests for the binary model container.
"""

import struct
from pathlib import Path

import numpy as np
import pytest
from ecgtcn import (
    ContainerError,
    Network,
    QNetwork,
    fold_batchnorm,
    forward,
    load_model,
    qforward,
    quantize_input,
    read_container,
    save_model,
    write_container,
)
from ecgtcn.container import MAGIC, Container


class TestRawContainer:
    """Tests for the tensor table format."""

    def test_round_trip(self, tmp_path: Path) -> None:
        """Metadata and tensors of every supported dtype survive a round trip."""
        tensors = {
            "a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.array([-128, 0, 127], dtype=np.int8),
            "c": np.array([[2**31 - 1]], dtype=np.int32),
        }
        path = tmp_path / "m.etcn"
        write_container(path, Container({"k": "v", "x": "1=2"}, tensors))
        back = read_container(path)
        assert back.metadata == {"k": "v", "x": "1=2"}
        assert list(back.tensors) == ["a", "b", "c"]
        for name, array in tensors.items():
            assert back.tensors[name].dtype == array.dtype
            np.testing.assert_array_equal(back.tensors[name], array)

    def test_starts_with_magic(self, tmp_path: Path) -> None:
        """Files start with the magic and version 1, little-endian."""
        path = tmp_path / "m.etcn"
        write_container(path, Container())
        raw = path.read_bytes()
        assert raw[:4] == MAGIC
        assert struct.unpack("<I", raw[4:8])[0] == 1

    def test_unsupported_dtype(self, tmp_path: Path) -> None:
        """Only float32, int8 and int32 tensors can be written."""
        with pytest.raises(ContainerError, match="unsupported dtype"):
            write_container(tmp_path / "m.etcn", Container({}, {"x": np.zeros(2)}))

    def test_bad_magic(self, tmp_path: Path) -> None:
        """A foreign file is rejected."""
        path = tmp_path / "m.etcn"
        path.write_bytes(b"PK\x03\x04" + bytes(16))
        with pytest.raises(ContainerError, match="bad magic/length"):
            read_container(path)

    def test_truncated(self, tmp_path: Path) -> None:
        """A file cut anywhere inside the tensor table is rejected."""
        path = tmp_path / "m.etcn"
        write_container(path, Container({"k": "v"}, {"a": np.ones(8, dtype=np.float32)}))
        raw = path.read_bytes()
        for cut in (3, 10, len(raw) - 1):
            path.write_bytes(raw[:cut])
            with pytest.raises(ContainerError, match="bad magic/length"):
                read_container(path)

    def test_trailing_bytes(self, tmp_path: Path) -> None:
        """Bytes after the tensor table are rejected."""
        path = tmp_path / "m.etcn"
        write_container(path, Container({}, {"a": np.ones(2, dtype=np.int8)}))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ContainerError, match="bad magic/length"):
            read_container(path)

    def test_unknown_version(self, tmp_path: Path) -> None:
        """Other format versions are rejected."""
        path = tmp_path / "m.etcn"
        write_container(path, Container())
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 7)
        path.write_bytes(bytes(raw))
        with pytest.raises(ContainerError, match="version 7"):
            read_container(path)


class TestModels:
    """Tests for saving and loading networks."""

    def test_float_round_trip(self, tmp_path: Path, toy_net: Network, toy_data) -> None:
        """A float network reloads with float32-rounded parameters and the same outputs."""
        path = tmp_path / "float.etcn"
        save_model(path, toy_net, {"train.seed": "3"})
        back = load_model(path)
        assert isinstance(back, Network)
        assert back.cfg == toy_net.cfg
        assert not back.folded
        for name, value in toy_net.named_parameters().items():
            np.testing.assert_array_equal(
                back.named_parameters()[name], value.astype(np.float32).astype(np.float64)
            )
        np.testing.assert_allclose(
            forward(back, toy_data.x), forward(toy_net, toy_data.x), rtol=1e-4, atol=1e-4
        )
        assert read_container(path).metadata["train.seed"] == "3"

    def test_folded_round_trip(self, tmp_path: Path, toy_net: Network) -> None:
        """A folded network reloads without batch norms."""
        path = tmp_path / "folded.etcn"
        save_model(path, fold_batchnorm(toy_net))
        back = load_model(path)
        assert isinstance(back, Network)
        assert back.folded
        assert list(back.batchnorms()) == []

    def test_quantized_round_trip(
        self, tmp_path: Path, toy_qnet: QNetwork, toy_data
    ) -> None:
        """A quantized network reloads with identical integers and identical logits."""
        path = tmp_path / "q.etcn"
        save_model(path, toy_qnet)
        back = load_model(path)
        assert isinstance(back, QNetwork)
        for a, b in zip(back.convs(), toy_qnet.convs(), strict=True):
            assert a.name == b.name
            np.testing.assert_array_equal(a.weight, b.weight)
            np.testing.assert_array_equal(a.bias, b.bias)
            assert a.requant == b.requant
            assert a.out_qp.zero_point == b.out_qp.zero_point
        x = quantize_input(toy_qnet, toy_data.x)
        np.testing.assert_array_equal(qforward(back, x), qforward(toy_qnet, x))
        assert back.float_param_count == toy_qnet.float_param_count

    def test_quantized_flag(self, tmp_path: Path, toy_net: Network, toy_qnet: QNetwork) -> None:
        """The metadata says which kind of network a file holds."""
        save_model(tmp_path / "f.etcn", toy_net)
        save_model(tmp_path / "q.etcn", toy_qnet)
        assert not read_container(tmp_path / "f.etcn").quantized
        assert read_container(tmp_path / "q.etcn").quantized

    def test_missing_tensor(self, tmp_path: Path, toy_net: Network) -> None:
        """A container lacking a parameter cannot be loaded."""
        path = tmp_path / "f.etcn"
        save_model(path, toy_net)
        c = read_container(path)
        del c.tensors["entry.weight"]
        write_container(path, c)
        with pytest.raises(ContainerError, match="entry.weight"):
            load_model(path)

    def test_shape_mismatch(self, tmp_path: Path, toy_net: Network) -> None:
        """Architecture metadata that disagrees with the tensors is rejected."""
        path = tmp_path / "f.etcn"
        save_model(path, toy_net)
        c = read_container(path)
        c.tensors["entry.weight"] = np.zeros((1, 1, 1), dtype=np.float32)
        write_container(path, c)
        with pytest.raises(ContainerError, match="shape"):
            load_model(path)
