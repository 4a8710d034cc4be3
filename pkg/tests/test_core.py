import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelset.core import (
    INCLUDE_ALL,
    CallablePosterior,
    CoverageSpec,
    LabeledDataset,
    PredictionSet,
    ThresholdVector,
    is_admissible_sufficient,
    membership,
    predict_set,
    read_csv,
    split,
)
from labelset.errors import DataError, InvalidArgumentError


def fixed(probs):
    p = np.asarray(probs, dtype=float)
    return CallablePosterior(lambda X: np.tile(p, (len(X), 1)), p.size)


def dataset(labels, d=1, K=None):
    labels = np.asarray(labels)
    X = np.arange(labels.size * d, dtype=float).reshape(labels.size, d)
    return LabeledDataset(X, labels, K or int(labels.max()))


class TestLabeledDataset:
    def test_rejects_out_of_range_labels(self):
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 1)), [0, 1], 2)
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 1)), [1, 3], 2)

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            LabeledDataset(np.array([[np.nan], [0.0]]), [1, 2], 2)

    def test_frequencies_sum_to_one_with_absent_class(self):
        ds = LabeledDataset(np.zeros((4, 2)), [1, 1, 3, 3], 3)
        np.testing.assert_allclose(ds.class_frequencies(), [0.5, 0.0, 0.5])
        assert ds.class_frequencies().sum() == pytest.approx(1.0)

    def test_immutable(self):
        ds = dataset([1, 2])
        with pytest.raises(ValueError):
            ds.features[0, 0] = 5.0

    def test_fingerprint_tracks_content(self):
        a, b = dataset([1, 2, 1]), dataset([1, 2, 2])
        assert a.fingerprint() == dataset([1, 2, 1]).fingerprint()
        assert a.fingerprint() != b.fingerprint()


class TestSplit:
    def test_cardinalities(self):
        plan = split(dataset([1, 1, 2, 2]), seed=7, fraction=0.5)
        assert len(plan.fit_indices) == 2 and len(plan.calibration_indices) == 2
        assert not set(plan.fit_indices) & set(plan.calibration_indices)
        assert sorted([*plan.fit_indices, *plan.calibration_indices]) == [0, 1, 2, 3]

    def test_class_partition(self):
        ds = dataset([1, 1, 2, 2])
        plan = split(ds, seed=3, fraction=0.5)
        joined = np.sort(np.concatenate(plan.calibration_by_class))
        np.testing.assert_array_equal(joined, plan.calibration_indices)
        for y, idx in enumerate(plan.calibration_by_class, start=1):
            assert np.all(ds.labels[idx] == y)

    def test_deterministic(self):
        ds = dataset(np.arange(50) % 3 + 1)
        a, b = split(ds, 11, 0.3), split(ds, 11, 0.3)
        np.testing.assert_array_equal(a.fit_indices, b.fit_indices)
        assert len(a.fit_indices) == 15
        c = split(ds, 12, 0.3)
        assert not np.array_equal(a.fit_indices, c.fit_indices)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(InvalidArgumentError):
            split(dataset([1, 2, 1]), 0, fraction)

    def test_missing_class_is_flagged(self):
        ds = dataset([1] * 9 + [2])
        plans = [split(ds, s, 0.5) for s in range(20)]
        flagged = [p for p in plans if p.missing_classes]
        assert flagged and all(p.missing_classes == (2,) for p in flagged)


class TestPredictSet:
    def test_direct_comparison(self):
        t = ThresholdVector.class_specific([0.5, 0.5])
        assert predict_set(fixed([0.6, 0.4]), t, [0.0]).members == (1,)

    def test_both_below(self):
        t = ThresholdVector.class_specific([0.7, 0.8])
        assert predict_set(fixed([0.6, 0.4]), t, [0.0]).is_empty

    def test_include_all(self):
        t = ThresholdVector.class_specific([INCLUDE_ALL, INCLUDE_ALL])
        assert predict_set(fixed([0.0, 1.0]), t, [0.0]).members == (1, 2)

    def test_tie_is_included(self):
        t = ThresholdVector.class_specific([0.6, 0.9])
        assert predict_set(fixed([0.6, 0.4]), t, [0.0]).members == (1,)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            predict_set(fixed([0.6, 0.4]), ThresholdVector.class_specific([0.1, 0.1, 0.1]), [0.0])

    def test_total_mode_matches_equal_vector(self):
        rng = np.random.default_rng(0)
        P = rng.dirichlet(np.ones(4), size=200)
        for t in (0.0, 0.2, 0.25, 0.5):
            np.testing.assert_array_equal(
                membership(P, ThresholdVector.total(t)),
                membership(P, ThresholdVector.class_specific([t] * 4)),
            )


class TestAdmissibility:
    @pytest.mark.parametrize("values, expected", [
        ((0.3, 0.3, 0.4), True),
        ((0.65, 0.75), False),
        ((INCLUDE_ALL, 0.9), True),
    ])
    def test_examples(self, values, expected):
        assert is_admissible_sufficient(ThresholdVector.class_specific(values)) is expected

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_sufficiency_implies_nonempty(self, K, seed):
        rng = np.random.default_rng(seed)
        t = rng.dirichlet(np.ones(K)) * rng.uniform(0, 1)
        P = rng.dirichlet(np.full(K, 0.3), size=64)
        tv = ThresholdVector.class_specific(t)
        assert is_admissible_sufficient(tv)
        assert membership(P, tv).any(axis=1).all()

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 2**32 - 1))
    def test_monotone_in_thresholds(self, K, seed):
        rng = np.random.default_rng(seed)
        hi = rng.uniform(0, 1, K)
        lo = hi * rng.uniform(0, 1, K)
        P = rng.dirichlet(np.ones(K), size=64)
        big = membership(P, ThresholdVector.class_specific(lo))
        small = membership(P, ThresholdVector.class_specific(hi))
        assert np.all(big >= small)


class TestThresholdVector:
    def test_range_checked(self):
        with pytest.raises(InvalidArgumentError):
            ThresholdVector.class_specific([1.2, 0.1])
        with pytest.raises(InvalidArgumentError):
            ThresholdVector("total", (0.1, 0.2))

    def test_sentinel_sum(self):
        assert ThresholdVector.class_specific([INCLUDE_ALL, 0.25]).finite_sum() == 0.25


class TestCoverageSpec:
    def test_levels_strictly_inside(self):
        with pytest.raises(InvalidArgumentError):
            CoverageSpec.class_specific([0.1, 0.0])
        with pytest.raises(InvalidArgumentError):
            CoverageSpec.total(1.0)

    def test_broadcast(self):
        np.testing.assert_allclose(CoverageSpec.class_specific(0.1).class_levels(3), [0.1] * 3)
        with pytest.raises(InvalidArgumentError):
            CoverageSpec.class_specific([0.1, 0.2]).class_levels(3)


class TestPredictionSet:
    def test_sorted_and_bitmask(self):
        s = PredictionSet((3, 1))
        assert s.members == (1, 3) and s.bitmask == 0b101
        assert PredictionSet.from_bitmask(0b101) == s
        assert PredictionSet().bitmask == 0 and str(s) == "{1,3}"


class TestReadCsv:
    def test_numeric_labels(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,y\n1,2,1\n3,4,2\n5,6,2\n")
        ds = read_csv(p, "y")
        assert ds.n == 3 and ds.d == 2 and ds.class_count == 2
        assert ds.feature_names == ("a", "b")

    def test_string_labels_sorted(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,species\n1,virginica\n2,setosa\n3,versicolor\n")
        ds = read_csv(p, "species")
        assert ds.class_names == ("setosa", "versicolor", "virginica")
        np.testing.assert_array_equal(ds.labels, [3, 1, 2])

    def test_bad_rows_reported_with_line_numbers(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n1,1\nfoo,2\n3,1\n4,,\n")
        with pytest.raises(DataError, match="lines 3, 5"):
            read_csv(p, "y")

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n1,1\n")
        with pytest.raises(DataError, match="'label'"):
            read_csv(p, "label")
