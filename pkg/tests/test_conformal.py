import math

import numpy as np
import pytest

from gcfcp.conformal import (
    CalibrationData,
    ConditionalCalibrator,
    DegenerateGroupError,
    EmptySetError,
    GlobalCalibrator,
    calibrate_baseline,
    predict_classification,
    predict_regression,
    split_cp_threshold,
    threshold_search,
)
from gcfcp.federation import ClientDataset
from gcfcp.groups import SINGLE_GROUP, interval_family

FOUR_INTERVALS = interval_family([(0, 2), (1, 3), (2, 4), (3, 5)])


def single_group_data(scores, weights, test_weight):
    scores = np.asarray(scores, dtype=float)
    return CalibrationData(
        np.ones((scores.size, 1)), scores, np.asarray(weights, dtype=float), test_weight
    )


def augmented_quantile(scores, weights, test_weight, alpha, hi):
    """Exact oracle: smallest score whose cumulative weight reaches
    (1 - alpha) of the total including the test mass (placed at +inf)."""
    order = np.argsort(scores)
    s, w = np.asarray(scores)[order], np.asarray(weights)[order]
    target = (1.0 - alpha) * (w.sum() + test_weight)
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, target - 1e-12))
    return float(s[idx]) if idx < s.size else hi


class TestSplitCp:
    def test_order_statistic(self):
        assert split_cp_threshold(range(1, 10), 0.1) == 9.0

    def test_beyond_support_is_inf(self):
        assert split_cp_threshold([1.0, 2.0, 3.0], 0.001) == math.inf

    def test_small_alpha_large_n(self):
        scores = np.arange(1, 100, dtype=float)
        k = math.ceil(0.9 * 100)
        assert split_cp_threshold(scores, 0.1) == float(k)

    def test_empty(self):
        with pytest.raises(ValueError):
            split_cp_threshold([], 0.1)


class TestThresholdSearch:
    def test_matches_augmented_quantile_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(10, 80))
            scores = rng.random(n) * 5
            weights = rng.uniform(0.5, 2.0, n) / (n + 1)
            wt = float(rng.uniform(0.2, 1.5)) / (n + 1)
            alpha = float(rng.uniform(0.05, 0.3))
            data = single_group_data(scores, weights, wt)
            got = threshold_search(data, (1,), alpha, tol=1e-7)
            hi = data.default_bracket()[1]
            want = augmented_quantile(scores, weights, wt, alpha, hi)
            assert got == pytest.approx(want, abs=1e-5)

    def test_constant_scores(self):
        data = single_group_data([2.0] * 10, [0.1] * 10, 0.1)
        got = threshold_search(data, (1,), 0.2, tol=1e-7)
        assert got == pytest.approx(2.0, abs=1e-5)

    def test_tiny_alpha_returns_hi(self):
        data = single_group_data([1, 2, 3, 4, 5], [0.2] * 5, 0.2)
        hi = data.default_bracket()[1]
        assert threshold_search(data, (1,), 0.001) == hi

    def test_empty_set_error(self):
        data = single_group_data([1, 2, 3], [1.0] * 3, 0.1)
        with pytest.raises(EmptySetError):
            # a search_lo above the augmented quantile is already excluded
            threshold_search(data, (1,), 0.5, search_lo=10.0, search_hi=20.0)

    def test_degenerate_group_detected(self):
        feats = np.array([[1.0, 0.0], [1.0, 0.0]])
        data = CalibrationData(feats, np.array([1.0, 2.0]), np.array([0.5, 0.5]), 0.1)
        with pytest.raises(DegenerateGroupError) as err:
            threshold_search(data, (1, 1), 0.1)
        assert err.value.groups == (1,)

    def test_bad_bracket_and_tol(self):
        data = single_group_data([1.0], [1.0], 0.1)
        with pytest.raises(ValueError):
            threshold_search(data, (1,), 0.1, search_lo=2.0, search_hi=1.0)
        with pytest.raises(ValueError):
            threshold_search(data, (1,), 0.1, tol=0.0)

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(1)
        scores = rng.random(40) * 5
        data = single_group_data(scores, np.full(40, 1 / 41), 1 / 41)
        thresholds = [
            threshold_search(data, (1,), a) for a in (0.05, 0.1, 0.2, 0.3)
        ]
        assert all(b <= a + 1e-9 for a, b in zip(thresholds, thresholds[1:]))


class TestPredictionSets:
    def test_regression_interval(self):
        ps = predict_regression(3.0, 0.5)
        assert (ps.center - ps.radius, ps.center + ps.radius) == (2.5, 3.5)
        assert ps.contains(2.5) and ps.contains(3.5) and not ps.contains(3.6)
        assert ps.size == 1.0

    def test_regression_degenerate_point(self):
        ps = predict_regression(0.0, 0.0)
        assert ps.contains(0.0) and not ps.contains(0.001)

    def test_regression_negative_center(self):
        ps = predict_regression(-1.2, 2.0)
        assert ps.center - ps.radius == pytest.approx(-3.2)
        assert ps.center + ps.radius == pytest.approx(0.8)

    def test_regression_rejects_negative_threshold(self):
        with pytest.raises(ValueError):
            predict_regression(0.0, -0.1)

    def test_classification_filter(self):
        ps = predict_classification({0: 0.1, 1: 0.5, 2: 0.9}, 0.5)
        assert ps.labels == {0, 1}
        assert ps.size == 2.0

    def test_classification_extremes(self):
        scores = {0: 0.2, 1: 0.4}
        assert predict_classification(scores, 1.0).labels == {0, 1}
        assert predict_classification(scores, 0.1).labels == frozenset()
        with pytest.raises(ValueError):
            predict_classification({}, 0.5)

    def test_classification_nested_in_alpha(self):
        rng = np.random.default_rng(2)
        datasets = [
            ClientDataset(k, rng.integers(0, 10, 50), rng.random(50), 0.5)
            for k in (1, 2)
        ]
        from gcfcp.groups import GroupFamily, LabelSet

        fam = GroupFamily(
            groups=(
                LabelSet(frozenset(range(0, 6))),
                LabelSet(frozenset(range(4, 10))),
            ),
            feature="predicted_label",
        )
        candidates = {y: float(s) for y, s in enumerate(rng.random(10))}
        prev = None
        for alpha in (0.05, 0.1, 0.2, 0.3):
            cal = calibrate_baseline(
                "gcfcp_coreset", datasets, alpha, family=fam, delta=100.0,
                bracket=(-0.01, 1.01),
            )
            ps = predict_classification(candidates, cal.threshold((1, 0)))
            if prev is not None:
                assert ps.labels <= prev
            prev = ps.labels


class TestBaselines:
    def make_datasets(self, seed=3, n=(60, 40)):
        rng = np.random.default_rng(seed)
        return [
            ClientDataset(k + 1, rng.uniform(0, 5, nk), rng.random(nk) * 3, 1 / len(n))
            for k, nk in enumerate(n)
        ]

    def test_centralized_cp_is_global(self):
        cal = calibrate_baseline("centralized_cp", list(range(1, 10)), 0.1)
        assert isinstance(cal, GlobalCalibrator)
        assert cal.threshold((1, 0, 1)) == 9.0

    def test_fcp_marginal_equals_single_group_coreset(self):
        datasets = self.make_datasets()
        a = calibrate_baseline("fcp_marginal", datasets, 0.1, delta=500.0)
        b = calibrate_baseline(
            "gcfcp_coreset", datasets, 0.1, family=SINGLE_GROUP, delta=500.0
        )
        assert a.threshold((1,)) == pytest.approx(b.threshold((1,)), abs=1e-6)

    def test_gcfcp_centralized_single_client_equals_condcp(self):
        """With one client the mixture weights 1/(n+1) coincide exactly."""
        rng = np.random.default_rng(4)
        n = 100
        ds = ClientDataset(1, rng.uniform(0, 5, n), rng.random(n) * 3, 1.0)
        from gcfcp.groups import membership_matrix

        feats = membership_matrix(ds.covariates, FOUR_INTERVALS)
        a = calibrate_baseline("gcfcp_centralized", [ds], 0.1, family=FOUR_INTERVALS)
        b = calibrate_baseline("condcp_centralized", (feats, ds.scores), 0.1)
        for pattern in [(1, 0, 0, 0), (1, 1, 0, 0), (0, 1, 1, 0)]:
            assert a.threshold(pattern) == pytest.approx(b.threshold(pattern), abs=1e-6)

    def test_gcfcp_centralized_equal_clients_proportional_weights(self):
        """Equal pi and n give uniform per-point weights, proportional to the
        CondCP weights; only the augmented test mass differs across the two."""
        rng = np.random.default_rng(5)
        n = 50
        datasets = [
            ClientDataset(k, rng.uniform(0, 5, n), rng.random(n) * 3, 0.5)
            for k in (1, 2)
        ]
        data = CalibrationData.from_datasets(datasets, FOUR_INTERVALS)
        assert np.allclose(data.weights, 0.5 / (n + 1))
        assert data.test_weight == pytest.approx(2 * 0.5 / (n + 1))

    def test_conditional_calibrator_caches(self):
        datasets = self.make_datasets()
        cal = calibrate_baseline(
            "gcfcp_coreset", datasets, 0.1, family=FOUR_INTERVALS, delta=100.0
        )
        assert isinstance(cal, ConditionalCalibrator)
        t1 = cal.threshold((1, 1, 0, 0))
        t2 = cal.threshold((1, 1, 0, 0))
        assert t1 == t2
        assert len(cal.search_times) == 1
        assert cal.wire_bytes > 0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            calibrate_baseline("bogus", [1.0], 0.1)

    def test_missing_parameters(self):
        datasets = self.make_datasets()
        with pytest.raises(ValueError):
            calibrate_baseline("gcfcp_coreset", datasets, 0.1, family=FOUR_INTERVALS)
        with pytest.raises(ValueError):
            calibrate_baseline("gcfcp_centralized", datasets, 0.1)
