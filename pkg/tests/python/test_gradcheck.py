"""
Tests for the finite-difference gradient checker.
"""

import numpy as np
import pytest
from ecgtcn import Network, UsageError, check_gradients, fold_batchnorm


class TestCheckGradients:
    """Tests for check_gradients."""

    def test_every_tensor_passes(self, toy_net: Network, toy_data) -> None:
        """Backprop agrees with central differences on every parameter tensor."""
        x, y = toy_data.x[::7], toy_data.y[::7]
        assert set(y.tolist()) == {1, 2, 3, 4, 5}
        report = check_gradients(toy_net, x, y, n_coords=100)
        assert [t.name for t in report.tensors] == list(toy_net.named_parameters())
        assert report.passed(1e-4), report.format()

    def test_skipped_coordinates_are_replaced(self, toy_net: Network, toy_data) -> None:
        """Every tensor gets 100 checked coordinates unless it runs out of them."""
        report = check_gradients(toy_net, toy_data.x[::5], toy_data.y[::5], n_coords=100)
        sizes = {k: v.size for k, v in toy_net.named_parameters().items()}
        for t in report.tensors:
            assert t.checked == min(100, sizes[t.name] - t.skipped)
            assert t.checked + t.skipped <= sizes[t.name]

    def test_folded_network(self, toy_net: Network, toy_data) -> None:
        """The checker also covers networks without batch norm."""
        report = check_gradients(fold_batchnorm(toy_net), toy_data.x[::9], toy_data.y[::9], 30)
        assert report.passed(1e-4), report.format()

    def test_network_not_modified(self, toy_net: Network, toy_data) -> None:
        """Checking works on a copy."""
        before = toy_net.entry.weight.copy()
        check_gradients(toy_net, toy_data.x[:2], toy_data.y[:2], n_coords=5)
        np.testing.assert_array_equal(toy_net.entry.weight, before)

    def test_format_lists_tensors(self, toy_net: Network, toy_data) -> None:
        """The report has a header and one line per tensor."""
        report = check_gradients(toy_net, toy_data.x[:2], toy_data.y[:2], n_coords=2)
        assert len(report.format().splitlines()) == len(report.tensors) + 1

    def test_rejects_zero_coordinates(self, toy_net: Network, toy_data) -> None:
        """At least one coordinate per tensor is required."""
        with pytest.raises(UsageError):
            check_gradients(toy_net, toy_data.x[:2], toy_data.y[:2], n_coords=0)
