import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelset.calibration import (
    CONFORMAL,
    PLUGIN,
    ScoreSample,
    calibrate,
    conformal_class_thresholds,
    conformal_p_value,
    conformal_rank,
    conformal_threshold,
    plugin_class_thresholds,
    plugin_threshold,
)
from labelset.core import INCLUDE_ALL, CallablePosterior, CoverageSpec, LabeledDataset, split
from labelset.errors import DataError, InvalidArgumentError, LeakageError
from labelset.estimators import fit_knn

SCORES = [0.2, 0.5, 0.7, 0.9]


def brute_force_plugin(scores, alpha):
    """Largest candidate value whose fraction of scores at or above it is >= 1 - alpha."""
    s = np.asarray(scores)
    best = None
    for c in np.unique(s):
        if np.mean(s >= c) >= 1 - alpha - 1e-12:
            best = c if best is None else max(best, c)
    return float(best)


def min_over_sample(scores, alpha):
    """Smallest calibration score whose count of scores <= it exceeds (m+1)alpha - 1."""
    s = np.asarray(scores)
    m = s.size
    ok = [v for v in s if np.sum(s <= v) > (m + 1) * alpha - 1]
    return float(min(ok))


class TestPlugin:
    @pytest.mark.parametrize("alpha, expected", [(0.25, 0.5), (1e-9, 0.2), (0.8, 0.9)])
    def test_hand_examples(self, alpha, expected):
        assert plugin_threshold(SCORES, alpha) == expected

    def test_class_example(self):
        t = plugin_class_thresholds([[0.4, 0.8], [0.4, 0.8]], [0.5, 0.5])
        assert t.values == (0.8, 0.8)

    def test_empty_class_named(self):
        with pytest.raises(DataError, match="class 2"):
            plugin_class_thresholds([[0.4], []], 0.1)

    def test_empty_scores(self):
        with pytest.raises(InvalidArgumentError):
            plugin_threshold([], 0.1)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.001, 0.999))
    def test_matches_brute_force_and_covers(self, scores, alpha):
        t = plugin_threshold(scores, alpha)
        assert t == brute_force_plugin(scores, alpha)
        assert np.mean(np.asarray(scores) >= t) >= 1 - alpha - 1e-12

    def test_monotone_in_alpha(self):
        s = np.random.default_rng(0).uniform(size=50)
        ts = [plugin_threshold(s, a) for a in np.linspace(0.01, 0.99, 40)]
        assert np.all(np.diff(ts) >= 0)


class TestConformal:
    def test_p_value_examples(self):
        assert conformal_p_value(0.95, SCORES) == 1.0
        assert conformal_p_value(0.1, SCORES) == pytest.approx(0.2)
        assert conformal_p_value(0.6, SCORES) == pytest.approx(0.6)

    @pytest.mark.parametrize("alpha, expected", [(0.25, 0.2), (0.5, 0.5), (0.1, INCLUDE_ALL)])
    def test_threshold_examples(self, alpha, expected):
        assert conformal_threshold(SCORES, alpha) == expected

    def test_rank(self):
        assert conformal_rank(9, 0.1) == 1
        assert conformal_rank(4, 0.25) == 1
        assert conformal_rank(20, 0.01) == 0

    def test_p_value_ranks(self):
        s = np.random.default_rng(1).permutation(np.linspace(0, 1, 30))
        order = np.sort(s)
        for r, v in enumerate(order, start=1):
            # against the other 29 scores the r-th smallest has rank r among m+1 = 30
            rest = s[s != v]
            assert conformal_p_value(v, rest) == pytest.approx(r / 30)
            assert conformal_p_value(v, s) == pytest.approx((r + 1) / 31)

    def test_monotone_in_alpha(self):
        s = np.random.default_rng(2).uniform(size=40)
        ts = [conformal_threshold(s, a) for a in np.linspace(0.005, 0.99, 60)]
        assert ts[0] == INCLUDE_ALL
        assert all(a <= b for a, b in zip(ts, ts[1:]))

    @settings(max_examples=300, deadline=None)
    @given(st.integers(1, 60), st.floats(0.001, 0.999), st.integers(0, 2**32 - 1))
    def test_matches_min_over_sample(self, m, alpha, seed):
        s = np.random.default_rng(seed).permutation(m) / m + 0.001
        if math.floor(alpha * (m + 1)) < 1:
            assert conformal_threshold(s, alpha) == INCLUDE_ALL
        else:
            assert conformal_threshold(s, alpha) == min_over_sample(s, alpha)

    def test_include_all_metadata(self):
        t = conformal_class_thresholds([SCORES, [0.3] * 30], [0.1, 0.1])
        assert t.values[0] == INCLUDE_ALL and t.metadata["include_all"] == [1]

    def test_ties_use_index_order(self):
        s = ScoreSample([0.5, 0.5, 0.1], indices=[7, 3, 9])
        np.testing.assert_array_equal(s.indices[s.order], [9, 3, 7])


def mixture(n=120, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([1, 2], n // 2)
    X = rng.normal(size=(n, 1)) + np.where(y == 1, -1.0, 1.0)[:, None]
    return LabeledDataset(X, y, 2)


class TestCalibrate:
    def test_trivial_model_plugin(self):
        ds = LabeledDataset(np.zeros((5, 1)), [1] * 5, 2)
        model = CallablePosterior(lambda X: np.tile([1.0, 0.0], (len(X), 1)), 2)
        t = calibrate(model, ds, None, CoverageSpec.total(0.3), PLUGIN)
        assert t.values == (1.0,)

    def test_class_conformal_m9_gives_min(self):
        y = np.repeat([1, 2], 9)
        ds = LabeledDataset(np.linspace(0, 1, 18)[:, None], y, 2)
        scores = np.random.default_rng(3).uniform(size=(18, 2))
        scores /= scores.sum(axis=1, keepdims=True)
        lookup = {float(x): p for x, p in zip(ds.features[:, 0], scores)}
        model = CallablePosterior(lambda X: np.array([lookup[float(x)] for x in X[:, 0]]), 2)
        t = calibrate(model, ds, None, CoverageSpec.class_specific(0.1), PLUGIN)
        # plug-in at alpha=0.1 with m=9 needs all 9 points, i.e. the minimum
        assert t.values == (scores[:9, 0].min(), scores[9:, 1].min())
        assert conformal_threshold(scores[:9, 0], 0.1) == scores[:9, 0].min()

    def test_leakage_guard(self):
        ds = mixture()
        plan = split(ds, 0, 0.5)
        leaky = fit_knn(ds, 5)
        with pytest.raises(LeakageError):
            calibrate(leaky, ds, plan, CoverageSpec.class_specific(0.1), CONFORMAL)
        honest = fit_knn(ds.subset(plan.fit_indices), 5)
        calibrate(honest, ds, plan, CoverageSpec.class_specific(0.1), CONFORMAL)

    def test_conformal_requires_plan(self):
        ds = mixture()
        with pytest.raises(InvalidArgumentError):
            calibrate(fit_knn(ds, 5), ds, None, CoverageSpec.total(0.1), CONFORMAL)

    def test_missing_class_named(self):
        ds = LabeledDataset(np.arange(10.0)[:, None], [1] * 9 + [2], 2)
        plan = next(p for p in (split(ds, s, 0.5) for s in range(50)) if p.missing_classes)
        model = fit_knn(ds.subset(plan.fit_indices), 1)
        with pytest.raises(DataError, match="class 2"):
            calibrate(model, ds, plan, CoverageSpec.class_specific(0.1), CONFORMAL)

    def test_deterministic(self):
        ds = mixture()
        plan = split(ds, 4, 0.5)
        model = fit_knn(ds.subset(plan.fit_indices), 7)
        a = calibrate(model, ds, plan, CoverageSpec.class_specific([0.1, 0.2]), CONFORMAL)
        b = calibrate(model, ds, plan, CoverageSpec.class_specific([0.1, 0.2]), CONFORMAL)
        assert a.values == b.values and a.metadata == b.metadata
