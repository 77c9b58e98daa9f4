"""
Tests for parameter, MAC and memory accounting.
"""

import numpy as np
import pytest
from ecgtcn import (
    ArchConfig,
    Network,
    QNetwork,
    UsageError,
    allocate_arena,
    buffer_lifetimes,
    build_ecg_tcn,
    cost_report,
    count_macs,
    count_params,
    format_report,
    memory_footprint,
    peak_activation_bytes,
)
from ecgtcn.cost import PUBLISHED, Lifetime, report_key_values


class TestCounts:
    """Tests for parameter and MAC counts of the published configuration."""

    def test_params(self, published_net: Network) -> None:
        """Weights, biases, BN scale and shift, no running statistics."""
        assert count_params(published_net) == 14_859

    def test_params_within_published(self, published_net: Network) -> None:
        """The count is within 1% of the published figure."""
        assert abs(count_params(published_net) - PUBLISHED.params) / PUBLISHED.params < 0.01

    def test_params_of_layers(self, published_net: Network) -> None:
        """Layer collections are counted layer by layer."""
        assert count_params([published_net.entry, published_net.dense]) == 4 + 7_705

    def test_native_macs(self, published_net: Network) -> None:
        """Native dilation costs K taps per output."""
        assert count_macs(published_net) == 976_640
        assert abs(count_macs(published_net) - PUBLISHED.macs_native) / PUBLISHED.macs_native < 0.10

    def test_zero_stuffed_macs(self, published_net: Network) -> None:
        """Zero-stuffing costs d * (K - 1) + 1 taps per output."""
        assert count_macs(published_net, "zero_stuffed") == 2_331_840

    def test_zero_stuffing_ratio(self, published_net: Network) -> None:
        """Zero-stuffing more than doubles the work."""
        ratio = count_macs(published_net, "zero_stuffed") / count_macs(published_net, "native")
        assert 2.1 <= ratio <= 2.4

    def test_quantized_counts_match_float(
        self, published_net: Network, published_qnet: QNetwork
    ) -> None:
        """MACs depend only on shapes."""
        for mode in ("native", "zero_stuffed"):
            assert count_macs(published_qnet, mode) == count_macs(published_net, mode)

    def test_no_dilation_no_difference(self) -> None:
        """A single-block network has no dilated layer to stuff."""
        net = build_ecg_tcn(ArchConfig(n_blocks=1, check_receptive_field=False))
        assert count_macs(net, "native") == count_macs(net, "zero_stuffed")

    def test_bad_mode(self, published_net: Network) -> None:
        """Unknown MAC modes are rejected."""
        with pytest.raises(UsageError, match="mode"):
            count_macs(published_net, "im2col")


class TestMemory:
    """Tests for activation liveness and the arena."""

    def test_peak_activations(self, published_qnet: QNetwork) -> None:
        """A residual skip, a main-branch input and a main-branch output of 11 x 140."""
        assert peak_activation_bytes(buffer_lifetimes(published_qnet)) == 4_620

    def test_arena_reaches_peak(self, published_qnet: QNetwork) -> None:
        """Greedy-by-size placement needs no more than the peak."""
        assert allocate_arena(buffer_lifetimes(published_qnet)).size == 4_620

    def test_arena_never_overlaps_live_buffers(self, published_qnet: QNetwork) -> None:
        """Buffers that are live together occupy disjoint byte ranges."""
        lifetimes = buffer_lifetimes(published_qnet)
        plan = allocate_arena(lifetimes)
        for a in lifetimes:
            for b in lifetimes:
                if a.name < b.name and a.overlaps(b):
                    lo_a, lo_b = plan.offsets[a.name], plan.offsets[b.name]
                    assert lo_a + a.size <= lo_b or lo_b + b.size <= lo_a, (a.name, b.name)

    def test_lifetimes(self, published_qnet: QNetwork) -> None:
        """The input dies after the entry layer; a block output lives until the next add."""
        spans = {lt.name: (lt.start, lt.end) for lt in buffer_lifetimes(published_qnet)}
        assert spans["input"] == (0, 0)
        assert spans["entry"] == (0, 3)
        assert spans["blocks.0.h2"] == (2, 7)
        assert spans["blocks.2.h2"] == (9, 11)

    def test_empty(self) -> None:
        """No buffers need no memory."""
        assert peak_activation_bytes([]) == 0
        assert allocate_arena([]).size == 0

    def test_disjoint_lifetimes_share_memory(self) -> None:
        """Buffers that are never live together reuse the same bytes."""
        plan = allocate_arena([Lifetime("a", 100, 0, 1), Lifetime("b", 60, 2, 3)])
        assert plan.offsets == {"a": 0, "b": 0}
        assert plan.size == 100

    def test_weight_bytes(self, published_qnet: QNetwork) -> None:
        """int8 weights, int32 biases and 8-byte requantization records."""
        assert memory_footprint(published_qnet).weight_bytes == 15_069
        assert memory_footprint(published_qnet, zero_stuffed=True).weight_bytes == 24_749

    def test_total_under_forty_kb(self, published_qnet: QNetwork) -> None:
        """Both execution strategies fit in 40 kB."""
        for zs in (False, True):
            assert memory_footprint(published_qnet, zero_stuffed=zs).total_bytes <= 40 * 1024


class TestReport:
    """Tests for the cost report."""

    def test_float_report_has_no_memory(self, published_net: Network) -> None:
        """Float networks have no int8 layout to measure."""
        report = cost_report(published_net)
        assert report.params == 14_859
        assert report.weight_bytes is None
        assert report.lifetimes == []

    def test_layer_rows(self, published_qnet: QNetwork) -> None:
        """Per-layer rows sum to the totals and end at the full receptive field."""
        report = cost_report(published_qnet)
        assert sum(r.macs_native for r in report.layers) == report.macs_native
        assert sum(r.macs_zero_stuffed for r in report.layers) == report.macs_zero_stuffed
        assert report.layers[-1].name == "dense"
        assert report.layers[-1].receptive_field == 141
        assert report.params == 14_859

    def test_text_shows_published_figures(self, published_qnet: QNetwork) -> None:
        """Every computed figure sits beside its published counterpart."""
        text = format_report(cost_report(published_qnet))
        for expected in ("14,859", "14,883", "976,640", "1,030,260", "2,331,840", "26.63 kB"):
            assert expected in text
        assert "blocks.2.h2" in text

    def test_key_values(self, published_qnet: QNetwork) -> None:
        """Machine-readable output has one key per figure."""
        text = report_key_values(cost_report(published_qnet))
        values = dict(line.split("=") for line in text.splitlines())
        assert values["params"] == "14859"
        assert values["macs_native"] == "976640"
        assert values["peak_activation_bytes"] == "4620"
        assert np.isclose(float(values["macs_ratio"]), 2_331_840 / 976_640, atol=1e-4)
