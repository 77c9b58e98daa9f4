"""
Shared pytest fixtures for ecgtcn tests.
"""

import os
from pathlib import Path

import numpy as np
import pytest
from ecgtcn import (
    ArchConfig,
    Dataset,
    Network,
    QNetwork,
    build_ecg_tcn,
    calibrate,
    count_params,
    fold_batchnorm,
    quantize_network,
)
from ecgtcn.codegen import find_compiler

# Path to test data directory
TEST_DATA_DIR = Path(__file__).parent.parent / "data"

TOY_CFG = ArchConfig(input_len=24, f1=2, ft=6, kt=3, n_blocks=2, check_receptive_field=False)


def synthetic_beats(n_per_class: int, length: int = 140, seed: int = 0) -> Dataset:
    """Five separable classes of z-normalized beats: class k is a noisy k-cycle sine."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    rows, labels = [], []
    for label in range(1, 6):
        for _ in range(n_per_class):
            phase = rng.uniform(0, 0.5)
            x = np.sin(2 * np.pi * (label * t + phase)) + 0.1 * rng.standard_normal(length)
            rows.append((x - x.mean()) / x.std())
            labels.append(label)
    return Dataset.from_arrays(np.asarray(rows), labels)


def randomize_batchnorm(net: Network, seed: int = 0) -> Network:
    """Give every batch norm non-trivial statistics so folding has work to do."""
    rng = np.random.default_rng(seed)
    for _, bn in net.batchnorms():
        c = bn.channels
        bn.gamma[...] = rng.uniform(0.5, 1.5, c)
        bn.beta[...] = rng.uniform(-0.2, 0.2, c)
        bn.running_mean[...] = rng.uniform(-0.3, 0.3, c)
        bn.running_var[...] = rng.uniform(0.5, 2.0, c)
    return net


def quantized(net: Network, calib: Dataset) -> QNetwork:
    folded = fold_batchnorm(net)
    return quantize_network(
        folded, calibrate(folded, calib), float_param_count=count_params(net)
    )


@pytest.fixture
def toy_cfg() -> ArchConfig:
    """Return a two-block architecture small enough for exhaustive checks."""
    return TOY_CFG


@pytest.fixture
def toy_data() -> Dataset:
    """Return 8 synthetic beats per class at the toy input length."""
    return synthetic_beats(8, TOY_CFG.input_len, seed=1)


@pytest.fixture
def toy_net() -> Network:
    """Return an initialized toy network with randomized batch norms."""
    return randomize_batchnorm(build_ecg_tcn(TOY_CFG, seed=3))


@pytest.fixture
def toy_qnet(toy_net: Network, toy_data: Dataset) -> QNetwork:
    """Return the toy network folded and quantized on the toy data."""
    return quantized(toy_net, toy_data)


@pytest.fixture(scope="session")
def beats() -> Dataset:
    """Return 20 synthetic 140-sample beats per class."""
    return synthetic_beats(20, 140, seed=2)


@pytest.fixture(scope="session")
def published_net() -> Network:
    """Return an initialized network of the published configuration."""
    return randomize_batchnorm(build_ecg_tcn(ArchConfig(), seed=0))


@pytest.fixture(scope="session")
def published_qnet(published_net: Network, beats: Dataset) -> QNetwork:
    """Return the published configuration quantized on synthetic beats."""
    return quantized(published_net, beats)


@pytest.fixture(scope="session")
def ecg5000_dir() -> Path:
    """Return the ECG5000 directory, skipping when the UCR files are absent."""
    root = Path(os.environ.get("ECG5000_DIR", TEST_DATA_DIR / "ECG5000"))
    if not (root / "ECG5000_TRAIN.txt").exists() or not (root / "ECG5000_TEST.txt").exists():
        pytest.skip(f"ECG5000 files not found in {root}")
    return root


@pytest.fixture(scope="session")
def c_compiler() -> str:
    """Return a C compiler from PATH, skipping when there is none."""
    cc = find_compiler()
    if cc is None:
        pytest.skip("no C compiler on PATH")
    return cc


def write_ucr(path: Path, ds: Dataset) -> Path:
    """Write `ds` in UCR text format."""
    lines = [
        ",".join([f"{b.label:.7e}", *(f"{v:.7e}" for v in b.samples)]) for b in ds
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def make_beats():
    """Return the synthetic beat generator."""
    return synthetic_beats


@pytest.fixture
def ucr_file(tmp_path: Path):
    """Return a writer of UCR files inside the test's temporary directory."""

    def write(ds: Dataset, name: str = "beats.txt") -> Path:
        return write_ucr(tmp_path / name, ds)

    return write
