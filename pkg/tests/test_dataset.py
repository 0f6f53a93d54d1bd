import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import collapse_runs, is_subsequence
from rehabseg.dataset import (
    IGNORE_INDEX,
    LabelScheme,
    Sequence,
    downsample_indices,
    fold_split,
    kfold_by_patient,
    label_runs,
    read_labels_csv,
    read_manifest,
    read_standardized_csv,
    split_by_patient,
    standardize_length,
    truncate_after_mtr,
    write_labels_csv,
    write_manifest,
    write_standardized_csv,
)
from rehabseg.errors import ConfigError, LabelCoverageError, ParseError
from rehabseg.ingest import View


def make_record(seq_id, patient, n_valid=200, n_channels=22, view=View.CONTRALATERAL):
    values = np.zeros((300, n_channels))
    values[:n_valid] = 1.0
    labels = np.full(300, IGNORE_INDEX, dtype=np.int64)
    labels[:n_valid] = 0
    return Sequence(seq_id, patient, view, values, labels, n_valid)


class TestStandardizeLength:
    def test_exact_length_is_identity(self):
        values = np.random.default_rng(0).normal(size=(300, 4))
        labels = np.zeros(300, dtype=np.int64)
        out_v, out_l, n = standardize_length(values, labels)
        assert n == 300
        assert np.array_equal(out_v, values)
        assert np.array_equal(out_l, labels)

    def test_downsample_600_takes_even_indices(self):
        values = np.arange(600.0)[:, None]
        labels = np.arange(600, dtype=np.int64)
        out_v, out_l, n = standardize_length(values, labels)
        assert n == 600
        assert np.array_equal(out_l, np.arange(0, 600, 2))
        assert np.array_equal(out_v[:, 0], np.arange(0.0, 600.0, 2.0))

    def test_downsample_indices_strictly_increase(self):
        for total in (301, 307, 450, 599, 601, 1000, 2997):
            idx = downsample_indices(total)
            assert np.all(np.diff(idx) >= 1)
            assert idx[0] == 0 and idx[-1] < total

    def test_pad_150_with_zeros_and_ignore(self):
        values = np.ones((150, 3))
        labels = np.ones(150, dtype=np.int64)
        out_v, out_l, n = standardize_length(values, labels)
        assert n == 150
        assert np.array_equal(out_v[:150], values)
        assert np.all(out_v[150:] == 0.0)
        assert np.all(out_l[150:] == IGNORE_INDEX)
        assert np.all(out_l[:150] == 1)

    def test_labels_and_values_use_same_indices(self):
        rng = np.random.default_rng(1)
        n = 917
        values = rng.normal(size=(n, 2))
        labels = rng.integers(0, 4, n)
        out_v, out_l, _ = standardize_length(values, labels)
        idx = downsample_indices(n)
        assert np.array_equal(out_l, labels[idx])
        assert np.array_equal(out_v, values[idx])

    @given(st.integers(301, 2000), st.integers(0, 10**6))
    @settings(max_examples=50, deadline=None)
    def test_run_order_preserved_under_downsampling(self, total, seed):
        labels = np.random.default_rng(seed).integers(0, 4, total)
        _, out_l, _ = standardize_length(np.zeros((total, 1)), labels)
        assert is_subsequence(collapse_runs(out_l), collapse_runs(labels))


class TestTruncateAfterMtr:
    def test_drops_frames_after_last_mtr(self):
        labels = np.array([0, 0, 1, 2, 2, 3, 3])
        values = np.arange(7.0)[:, None]
        out_v, out_l = truncate_after_mtr(values, labels)
        assert list(out_l) == [0, 0, 1, 2, 2]
        assert out_v.shape == (5, 1)

    def test_sequence_ending_in_mtr_unchanged(self):
        labels = np.array([0, 1, 2, 2])
        out_v, out_l = truncate_after_mtr(np.zeros((4, 1)), labels)
        assert list(out_l) == [0, 1, 2, 2]

    def test_no_mtr_is_an_error(self):
        with pytest.raises(LabelCoverageError):
            truncate_after_mtr(np.zeros((2, 1)), np.array([0, 1]))


class TestLabelScheme:
    def test_top_has_four_classes(self):
        scheme = LabelScheme.for_view(View.TOP)
        assert scheme.classes == ("IP", "T", "MTR", "PR")
        assert scheme.index_of("PR") == 3

    def test_side_views_drop_pr(self):
        for view in (View.IPSILATERAL, View.CONTRALATERAL):
            assert LabelScheme.for_view(view).classes == ("IP", "T", "MTR")

    def test_ignore_index_outside_class_range(self):
        scheme = LabelScheme.for_view(View.TOP)
        assert scheme.ignore_index == 255
        assert scheme.ignore_index >= scheme.n_classes


class TestSplitByPatient:
    def test_holdout_routes_all_sequences(self):
        records = [make_record(f"s{i}", f"P{i % 10}") for i in range(30)]
        split = split_by_patient(records, {"P0", "P1"})
        assert {r.patient_id for r in split.test} == {"P0", "P1"}
        assert not ({r.patient_id for r in split.train} & {"P0", "P1"})
        assert len(split.train) + len(split.test) == 30

    def test_unknown_patient_raises(self):
        records = [make_record("a", "P0")]
        with pytest.raises(LookupError):
            split_by_patient(records, {"P9"})

    def test_single_patient_holdout_empties_train(self):
        records = [make_record("a", "P0"), make_record("b", "P0")]
        split = split_by_patient(records, {"P0"})
        assert split.train == []
        assert len(split.test) == 2


class TestKfold:
    def test_ten_patients_five_folds_of_two(self):
        records = [make_record(f"s{i}", f"P{i}") for i in range(10)]
        plan = kfold_by_patient(records, k=5, seed=0)
        assert sorted(len(f) for f in plan.folds) == [2, 2, 2, 2, 2]

    def test_eleven_patients_remainder(self):
        records = [make_record(f"s{i}", f"P{i}") for i in range(11)]
        plan = kfold_by_patient(records, k=5, seed=0)
        assert sorted(len(f) for f in plan.folds) == [2, 2, 2, 2, 3]

    def test_same_seed_same_folds(self):
        records = [make_record(f"s{i}", f"P{i}") for i in range(12)]
        a = kfold_by_patient(records, k=5, seed=42)
        b = kfold_by_patient(records, k=5, seed=42)
        assert a.folds == b.folds

    def test_disjoint_and_complete(self):
        records = [make_record(f"s{i}", f"P{i % 23}") for i in range(46)]
        plan = kfold_by_patient(records, k=5, seed=3)
        seen = [p for fold in plan.folds for p in fold]
        assert len(seen) == len(set(seen)) == 23

    def test_too_few_patients_rejected(self):
        records = [make_record(f"s{i}", f"P{i}") for i in range(3)]
        with pytest.raises(ConfigError):
            kfold_by_patient(records, k=5, seed=0)

    def test_fold_split_uses_fold_as_validation(self):
        records = [make_record(f"s{i}", f"P{i}") for i in range(10)]
        plan = kfold_by_patient(records, k=5, seed=1)
        split = fold_split(records, plan, 2)
        assert {r.patient_id for r in split.test} == set(plan.folds[2])
        assert len(split.train) == 8


class TestLabelRuns:
    def test_runs(self):
        assert label_runs(np.array([0, 0, 1, 2, 2, 2])) == [(0, 0, 2), (1, 2, 1), (2, 3, 3)]

    def test_single(self):
        assert label_runs(np.array([5])) == [(5, 0, 1)]


class TestFileFormats:
    def test_labels_roundtrip(self, tmp_path):
        scheme = LabelScheme.for_view(View.TOP)
        labels = np.array([0, 1, 2, 3, 2])
        path = tmp_path / "labels.csv"
        write_labels_csv(labels, scheme, path)
        assert path.read_text().splitlines()[0] == "frame,label"
        assert np.array_equal(read_labels_csv(path, scheme), labels)

    def test_labels_unknown_name_rejected(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("frame,label\n0,WAT\n")
        with pytest.raises(ParseError):
            read_labels_csv(path, LabelScheme.for_view(View.TOP))

    def test_standardized_roundtrip(self, tmp_path):
        record = make_record("s1", "P1", n_valid=120)
        path = tmp_path / "s1.csv"
        write_standardized_csv(record, path)
        back = read_standardized_csv(path, seq_id="s1", patient_id="P1")
        assert back.view is View.CONTRALATERAL
        assert np.array_equal(back.values, record.values)
        assert np.array_equal(back.labels, record.labels)
        assert back.original_length == 120

    def test_manifest_roundtrip(self, tmp_path):
        path = tmp_path / "manifest.csv"
        write_manifest([("s1", "P1", "top", 250, "s1.csv")], path)
        rows = read_manifest(path)
        assert rows[0]["view"] is View.TOP
        assert rows[0]["original_length"] == 250
