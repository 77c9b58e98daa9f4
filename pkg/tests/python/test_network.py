"""
Tests for building, running and differentiating the float network.
"""

import numpy as np
import pytest
from ecgtcn import (
    ArchConfig,
    Network,
    ShapeError,
    UsageError,
    backward,
    build_ecg_tcn,
    count_params,
    fold_batchnorm,
    forward,
    predict,
    receptive_field_reach,
)
from ecgtcn.network import forward_trace


def _all_active(net: Network) -> Network:
    # positive weights and large biases keep every ReLU open and rule out cancellation
    for name, conv in net.convs():
        conv.weight[...] = np.abs(conv.weight)
        if name != "entry":
            conv.bias[...] = 100.0
    return net


class TestBuild:
    """Tests for build_ecg_tcn."""

    def test_published_layout(self) -> None:
        """Three blocks with dilations 1, 2, 4 and a skip conv only in block 0."""
        net = build_ecg_tcn()
        assert [b.dilation for b in net.blocks] == [1, 2, 4]
        assert net.blocks[0].skip is not None
        assert net.blocks[1].skip is None and net.blocks[2].skip is None
        assert net.entry.weight.shape == (2, 1, 1)
        assert net.dense.weight.shape == (5, 1540)

    def test_parameter_count(self) -> None:
        """The published architecture has 14,859 learnable parameters."""
        assert count_params(build_ecg_tcn()) == 14_859

    def test_seeded_initialization(self) -> None:
        """Equal seeds give equal weights, different seeds different ones."""
        a, b, c = build_ecg_tcn(seed=1), build_ecg_tcn(seed=1), build_ecg_tcn(seed=2)
        np.testing.assert_array_equal(a.dense.weight, b.dense.weight)
        assert not np.array_equal(a.dense.weight, c.dense.weight)

    def test_no_skip_conv_when_depths_match(self) -> None:
        """With F1 == FT every skip is the identity."""
        net = build_ecg_tcn(ArchConfig(f1=11))
        assert all(b.skip is None for b in net.blocks)


class TestForward:
    """Tests for forward, predict and the receptive field."""

    def test_shapes(self, toy_net: Network, toy_cfg: ArchConfig) -> None:
        """One beat gives a logit vector, a batch a logit matrix."""
        x = np.zeros((4, toy_cfg.input_len))
        assert forward(toy_net, x[0]).shape == (5,)
        assert forward(toy_net, x).shape == (4, 5)
        assert predict(toy_net, x).shape == (4,)

    def test_wrong_length(self, toy_net: Network) -> None:
        """Input length must match the architecture."""
        with pytest.raises(ShapeError):
            forward(toy_net, np.zeros(7))

    def test_eval_is_deterministic(self, toy_net: Network, toy_data) -> None:
        """Eval mode ignores dropout."""
        np.testing.assert_array_equal(forward(toy_net, toy_data.x), forward(toy_net, toy_data.x))

    def test_predictions_are_one_based(self, toy_net: Network, toy_data) -> None:
        """Predicted labels lie in 1..5."""
        preds = predict(toy_net, toy_data.x)
        assert preds.min() >= 1 and preds.max() <= 5

    def test_trace_edges(self, toy_net: Network, toy_data) -> None:
        """Every activation edge is exposed under its name."""
        edges = forward_trace(toy_net, toy_data.x[:3]).edges()
        assert list(edges) == [
            "input", "entry",
            "blocks.0.h1", "blocks.0.h2", "blocks.0.skip", "blocks.0.out",
            "blocks.1.h1", "blocks.1.h2", "blocks.1.out",
        ]

    def test_causal_reach(self) -> None:
        """A perturbation never reaches backwards and reaches to the end of the beat."""
        earliest, latest = receptive_field_reach(_all_active(build_ecg_tcn(seed=0)), 50)
        assert earliest == 0
        assert latest == 139 - 50

    def test_reach_matches_receptive_field(self) -> None:
        """Sample t0 influences outputs up to t0 + RF - 1."""
        cfg = ArchConfig(input_len=60, f1=2, ft=3, kt=3, n_blocks=2, check_receptive_field=False)
        earliest, latest = receptive_field_reach(_all_active(build_ecg_tcn(cfg, seed=1)), 5)
        assert earliest == 0
        assert latest == cfg.receptive_field - 1


class TestBackward:
    """Tests for backward."""

    def test_gradient_names_and_shapes(self, toy_net: Network, toy_data) -> None:
        """Every parameter gets a gradient of its own shape."""
        loss, grads, _ = backward(
            toy_net, toy_data.x[:6], toy_data.y[:6], np.random.default_rng(0)
        )
        params = toy_net.named_parameters()
        assert loss > 0
        assert list(grads) == list(params)
        for name, g in grads.items():
            assert g.shape == params[name].shape

    def test_eval_mode_needs_folded_network(self, toy_net: Network, toy_data) -> None:
        """Eval-mode backward is refused while batch norm is present."""
        with pytest.raises(UsageError):
            backward(toy_net, toy_data.x[:2], toy_data.y[:2], mode="eval")

    def test_eval_mode_on_folded_network(self, toy_net: Network, toy_data) -> None:
        """A folded network can be differentiated in eval mode."""
        loss, grads, _ = backward(
            fold_batchnorm(toy_net), toy_data.x[:2], toy_data.y[:2], mode="eval"
        )
        assert np.isfinite(loss)
        assert "blocks.0.bn1.gamma" not in grads

    def test_empty_batch(self, toy_net: Network, toy_cfg: ArchConfig) -> None:
        """An empty batch has no loss."""
        with pytest.raises(ShapeError):
            backward(toy_net, np.zeros((0, toy_cfg.input_len)), np.zeros(0, dtype=int))
