"""
Tests for UCR loading, beat files and stratified holdout.
"""

from pathlib import Path

import numpy as np
import pytest
from ecgtcn import (
    CLASS_NAMES,
    Beat,
    Dataset,
    DomainError,
    ParseError,
    UsageError,
    load_ucr,
    read_beats,
    stratified_holdout,
)


def _line(label: str, n: int = 140, sep: str = ",") -> str:
    return sep.join([label, *(f"{0.01 * i:.4f}" for i in range(n))])


class TestLoadUcr:
    """Tests for load_ucr."""

    def test_loads_records_in_order(self, tmp_path: Path) -> None:
        """Every non-empty line becomes one beat with its label."""
        path = tmp_path / "d.txt"
        path.write_text(f"{_line('3.0000000e+00')}\n\n{_line('1')}\n", encoding="utf-8")
        ds = load_ucr(path)
        assert len(ds) == 2
        assert ds.input_len == 140
        assert list(ds.y) == [3, 1]
        assert ds[0].samples[1] == pytest.approx(0.01)

    @pytest.mark.parametrize("sep", [",", " ", "\t", "  "])
    def test_delimiters(self, tmp_path: Path, sep: str) -> None:
        """Commas, spaces and tabs all separate fields."""
        path = tmp_path / "d.txt"
        path.write_text(_line("2", sep=sep) + "\n", encoding="utf-8")
        assert load_ucr(path).y.tolist() == [2]

    def test_wrong_field_count(self, tmp_path: Path) -> None:
        """A short line is reported with its line number."""
        path = tmp_path / "d.txt"
        path.write_text(f"{_line('1')}\n{_line('1', n=139)}\n", encoding="utf-8")
        with pytest.raises(ParseError) as info:
            load_ucr(path)
        assert info.value.line_no == 2
        assert str(path) in str(info.value)

    def test_non_numeric_field(self, tmp_path: Path) -> None:
        """A non-numeric sample is a parse error."""
        path = tmp_path / "d.txt"
        path.write_text(_line("1").replace("0.0100", "abc") + "\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_ucr(path)

    @pytest.mark.parametrize("label", ["0", "6", "2.5"])
    def test_label_out_of_domain(self, tmp_path: Path, label: str) -> None:
        """Labels must be integers in 1..5."""
        path = tmp_path / "d.txt"
        path.write_text(_line(label) + "\n", encoding="utf-8")
        with pytest.raises(DomainError):
            load_ucr(path)

    def test_missing_file(self, tmp_path: Path) -> None:
        """A missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_ucr(tmp_path / "absent.txt")

    def test_real_split_sizes(self, ecg5000_dir: Path) -> None:
        """ECG5000 holds 500 training and 4500 test beats of 140 samples."""
        train = load_ucr(ecg5000_dir / "ECG5000_TRAIN.txt")
        test = load_ucr(ecg5000_dir / "ECG5000_TEST.txt")
        assert (len(train), len(test), train.input_len) == (500, 4500, 140)


class TestReadBeats:
    """Tests for inference beat files."""

    def test_accepts_bare_and_labelled_lines(self, tmp_path: Path) -> None:
        """Bare beats and UCR records are both accepted; labels are dropped."""
        path = tmp_path / "b.txt"
        bare = " ".join(f"{0.5:.1f}" for _ in range(140))
        path.write_text(f"{bare}\n{_line('4')}\n", encoding="utf-8")
        beats = read_beats(path)
        assert len(beats) == 2
        assert beats[0].shape == beats[1].shape == (140,)
        assert beats[1][0] == 0.0

    def test_rejects_other_lengths(self, tmp_path: Path) -> None:
        """Lines of neither length are parse errors."""
        path = tmp_path / "b.txt"
        path.write_text(" ".join(["1"] * 50) + "\n", encoding="utf-8")
        with pytest.raises(ParseError):
            read_beats(path)


class TestDataset:
    """Tests for Beat and Dataset."""

    def test_class_names(self) -> None:
        """Labels map to the five ECG5000 class names."""
        assert Beat(np.zeros(4), 2).class_name == "R-on-T PVC"
        assert CLASS_NAMES[0] == "Normal (N)"

    def test_rejects_unequal_lengths(self) -> None:
        """All beats of a dataset share one length."""
        with pytest.raises(DomainError):
            Dataset((Beat(np.zeros(4), 1), Beat(np.zeros(5), 1)))

    def test_class_counts(self, make_beats) -> None:
        """Counts cover every class, including absent ones."""
        ds = make_beats(3, 10).subset(range(6))
        assert ds.class_counts() == {1: 3, 2: 3, 3: 0, 4: 0, 5: 0}

    def test_from_arrays_shape_mismatch(self) -> None:
        """Sample rows and labels must agree in number."""
        with pytest.raises(UsageError):
            Dataset.from_arrays(np.zeros((3, 4)), [1, 2])


class TestStratifiedHoldout:
    """Tests for stratified_holdout."""

    def test_disjoint_and_exhaustive(self, make_beats) -> None:
        """The two parts partition the dataset."""
        ds = make_beats(10, 12)
        kept, held = stratified_holdout(ds, 0.2, seed=1)
        assert len(kept) + len(held) == len(ds)
        assert len(held) == 10
        ids = {id(b) for b in kept} | {id(b) for b in held}
        assert len(ids) == len(ds)

    def test_every_class_on_both_sides(self, make_beats) -> None:
        """Classes with at least two members appear in both parts."""
        kept, held = stratified_holdout(make_beats(4, 12), 0.1, seed=0)
        assert all(v > 0 for v in held.class_counts().values())
        assert all(v > 0 for v in kept.class_counts().values())

    def test_seed_determinism(self, make_beats) -> None:
        """The same seed selects the same beats; another seed may not."""
        ds = make_beats(10, 12)
        a = stratified_holdout(ds, 0.3, seed=5)[1]
        b = stratified_holdout(ds, 0.3, seed=5)[1]
        assert [id(x) for x in a] == [id(x) for x in b]

    def test_keeps_file_order(self, make_beats) -> None:
        """Both parts preserve the original order."""
        ds = make_beats(6, 12)
        position = {id(b): i for i, b in enumerate(ds)}
        for part in stratified_holdout(ds, 0.5, seed=2):
            order = [position[id(b)] for b in part]
            assert order == sorted(order)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_bad_fraction(self, make_beats, fraction: float) -> None:
        """The fraction must lie strictly between 0 and 1."""
        with pytest.raises(UsageError):
            stratified_holdout(make_beats(2, 8), fraction)

    def test_tenth_of_five_hundred(self, make_beats) -> None:
        """A 0.1 holdout of 500 balanced beats takes 50, ten per class."""
        kept, held = stratified_holdout(make_beats(100, 16), 0.1, seed=7)
        assert (len(kept), len(held)) == (450, 50)
        assert held.class_counts() == {k: 10 for k in range(1, 6)}

    def test_small_classes_split_both_ways(self, make_beats) -> None:
        """A two-member class splits 1/1; a singleton stays in the remaining part."""
        ds = make_beats(8, 16)
        labels = ds.y
        rows = [*np.flatnonzero(labels <= 3), *np.flatnonzero(labels == 4)[:2]]
        rows.append(int(np.flatnonzero(labels == 5)[0]))
        kept, held = stratified_holdout(ds.subset(sorted(rows)), 0.25, seed=3)
        assert held.class_counts()[4] == kept.class_counts()[4] == 1
        assert held.class_counts()[5] == 0
        assert kept.class_counts()[5] == 1

    def test_only_singletons(self, make_beats) -> None:
        """Without any class of two members there is nothing to split."""
        ds = make_beats(1, 16)
        with pytest.raises(UsageError, match="two members"):
            stratified_holdout(ds, 0.5)
