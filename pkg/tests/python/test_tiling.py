"""
Tests for the L1/L2 tiling planner and the tiled executor.
"""

from dataclasses import replace

import numpy as np
import pytest
from ecgtcn import (
    CapacityError,
    QNetwork,
    StructureError,
    UsageError,
    execute_tiled,
    parse_budget,
    plan_tiles,
    qforward,
    quantize_input,
)
from ecgtcn.tiling import format_plan, plan_key_values


class TestParseBudget:
    """Tests for budget strings."""

    @pytest.mark.parametrize(
        ("text", "expected"),
        [
            ("8192", 8192),
            (4096, 4096),
            ("80kB", 81920),
            ("16k", 16384),
            ("32 KiB", 32768),
            ("0.5MiB", 524288),
            ("100b", 100),
        ],
    )
    def test_valid(self, text: str | int, expected: int) -> None:
        """Suffixes are binary multiples."""
        assert parse_budget(text) == expected

    @pytest.mark.parametrize("text", ["", "abc", "-5kB", "12 bytes", "0", "1.5GB"])
    def test_invalid(self, text: str) -> None:
        """Anything else is a usage error."""
        with pytest.raises(UsageError):
            parse_budget(text)


class TestPlan:
    """Tests for the tiling planner."""

    @pytest.mark.parametrize("kb", [8, 16, 32, 80])
    def test_feasible_within_budget(self, published_qnet: QNetwork, kb: int) -> None:
        """The published network tiles at common scratchpad sizes."""
        plan = plan_tiles(published_qnet, kb * 1024)
        assert plan.peak_working_set <= kb * 1024
        assert [lp.name for lp in plan.layers][-1] == "dense"

    def test_large_budget_needs_one_tile(self, published_qnet: QNetwork) -> None:
        """With room to spare, every convolution runs in a single tile."""
        plan = plan_tiles(published_qnet, parse_budget("80kB"))
        for lp in plan.layers:
            if lp.kind == "conv":
                assert len(lp.tiles) == 1
                assert lp.tile_len == 140

    def test_tiles_partition_output(self, published_qnet: QNetwork) -> None:
        """Tiles cover every output column exactly once and fetch their halos."""
        plan = plan_tiles(published_qnet, 4096)
        convs = {c.name: c for c in published_qnet.convs()}
        for lp in plan.layers:
            starts = [t.out_start for t in lp.tiles]
            ends = [t.out_end for t in lp.tiles]
            assert starts[0] == 0 and ends[-1] == lp.extent
            assert starts[1:] == ends[:-1]
            if lp.name in convs:
                halo = convs[lp.name].halo
                assert all(t.in_start == t.out_start - halo for t in lp.tiles)

    def test_halos_are_refetched(self, published_qnet: QNetwork) -> None:
        """Smaller tiles move more bytes from L2."""
        big = plan_tiles(published_qnet, parse_budget("80kB"))
        small = plan_tiles(published_qnet, 4096)
        assert small.bytes_l2_to_l1 > big.bytes_l2_to_l1
        assert small.bytes_l1_to_l2 == big.bytes_l1_to_l2

    def test_output_traffic(self, published_qnet: QNetwork) -> None:
        """Every feature map is written back once, plus the int32 logits."""
        plan = plan_tiles(published_qnet, 8192)
        # entry, 7 block convs of 11 channels, 3 in-place adds, 5 logits
        assert plan.bytes_l1_to_l2 == 2 * 140 + 7 * 11 * 140 + 3 * 11 * 140 + 4 * 5

    def test_double_buffering_costs_room(self, published_qnet: QNetwork) -> None:
        """A budget that fits single buffers can be too small for two."""
        single = plan_tiles(published_qnet, 2000, double_buffer=False)
        assert single.peak_working_set <= 2000
        with pytest.raises(CapacityError, match="blocks.2.conv1"):
            plan_tiles(published_qnet, 2000)

    def test_capacity_error_names_layer(self, published_qnet: QNetwork) -> None:
        """An impossible budget names the first layer that cannot run."""
        with pytest.raises(CapacityError, match="entry"):
            plan_tiles(published_qnet, 1)

    def test_nonpositive_budget(self, published_qnet: QNetwork) -> None:
        """Budgets must be positive."""
        with pytest.raises(UsageError):
            plan_tiles(published_qnet, 0)

    def test_text_outputs(self, published_qnet: QNetwork) -> None:
        """The summary and the key=value listing describe the same plan."""
        plan = plan_tiles(published_qnet, 8192)
        assert f"peak working set {plan.peak_working_set} B" in format_plan(plan)
        listing = plan_key_values(plan).splitlines()
        assert "budget=8192" in listing
        assert sum(line.startswith("layer ") for line in listing) == len(plan.layers)
        assert sum(line.startswith("tile ") for line in listing) == sum(
            len(lp.tiles) for lp in plan.layers
        )


class TestExecuteTiled:
    """Tests for tile-by-tile execution."""

    @pytest.mark.parametrize("kb", [8, 16, 32, 80])
    def test_matches_untiled(self, published_qnet: QNetwork, beats, kb: int) -> None:
        """Tiled logits are bit-identical to whole-layer logits on all 100 beats."""
        assert len(beats) == 100
        plan = plan_tiles(published_qnet, kb * 1024)
        for beat in beats:
            expected = qforward(published_qnet, quantize_input(published_qnet, beat))
            np.testing.assert_array_equal(execute_tiled(published_qnet, beat, plan), expected)

    def test_single_buffered_small_budget(self, published_qnet: QNetwork, beats) -> None:
        """A budget only feasible without double buffering still reproduces the logits."""
        plan = plan_tiles(published_qnet, 2000, double_buffer=False)
        for beat in list(beats)[::7]:
            expected = qforward(published_qnet, quantize_input(published_qnet, beat))
            got = execute_tiled(published_qnet, beat, plan)
            assert got.dtype == np.int32
            np.testing.assert_array_equal(got, expected)

    def test_toy_network(self, toy_qnet: QNetwork, toy_data) -> None:
        """Tiny tiles on a small network still reproduce the logits."""
        plan = plan_tiles(toy_qnet, 200, double_buffer=False)
        assert any(len(lp.tiles) > 1 for lp in plan.layers)
        for beat in toy_data:
            np.testing.assert_array_equal(
                execute_tiled(toy_qnet, beat, plan),
                qforward(toy_qnet, quantize_input(toy_qnet, beat)),
            )

    def test_plan_of_other_network(
        self, published_qnet: QNetwork, toy_qnet: QNetwork, beats
    ) -> None:
        """A plan made for a different network is rejected."""
        plan = plan_tiles(toy_qnet, 8192)
        with pytest.raises(StructureError):
            execute_tiled(published_qnet, beats[0], plan)

    def test_incomplete_plan(self, published_qnet: QNetwork, beats) -> None:
        """A plan whose tiles miss columns is rejected."""
        plan = plan_tiles(published_qnet, 4096)
        first = plan.layers[0]
        broken = replace(first, tiles=first.tiles[:-1])
        plan = replace(plan, layers=[broken, *plan.layers[1:]])
        with pytest.raises(StructureError, match="entry"):
            execute_tiled(published_qnet, beats[0], plan)
