import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covid_acoustics.errors import CoverageMismatch, DegenerateLabels
from covid_acoustics.metrics import (
    N_THRESHOLDS,
    auc_trapezoid,
    evaluate,
    roc_curve,
    sensitivity_at_specificity,
    threshold_grid,
)

from conftest import brute_force_rates, mann_whitney_auc, random_score_set


class TestRocCurve:
    def test_grid(self):
        t = threshold_grid()
        assert len(t) == N_THRESHOLDS == 10001
        assert t[0] == 0.0 and t[-1] == 1.0
        np.testing.assert_allclose(np.diff(t), 1e-4, atol=1e-15)
        assert t[3000] == 0.3

    def test_perfect_separation(self):
        curve = roc_curve([1.0, 1.0, 0.0, 0.0], [1, 1, 0, 0])
        inner = curve.thresholds > 0
        assert np.all(curve.sensitivity[inner] == 1.0)
        assert np.all(curve.specificity[inner] == 1.0)

    def test_all_tied(self):
        curve = roc_curve([0.4] * 6, [1, 0, 1, 0, 0, 1])
        pts = set(zip(curve.fpr.tolist(), curve.sensitivity.tolist()))
        assert pts == {(1.0, 1.0), (0.0, 0.0)}

    def test_matches_brute_force_recount(self, rng):
        scores = rng.random(10)
        labels = np.array([1, 0, 1, 1, 0, 0, 0, 1, 0, 0])
        curve = roc_curve(scores, labels)
        sens, spec = brute_force_rates(scores, labels, curve.thresholds)
        np.testing.assert_array_equal(curve.sensitivity, sens)
        np.testing.assert_array_equal(curve.specificity, spec)

    def test_ge_rule_at_exact_threshold(self):
        curve = roc_curve([0.3, 0.2], [1, 0])
        k = 3000
        assert curve.thresholds[k] == 0.3
        assert curve.sensitivity[k] == 1.0

    def test_monotone(self, rng):
        for _ in range(20):
            s, y = random_score_set(rng)
            c = roc_curve(s, y)
            assert np.all(np.diff(c.sensitivity) <= 0)
            assert np.all(np.diff(c.specificity) >= 0)

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateLabels):
            roc_curve([0.1, 0.2], [1, 1])

    def test_mapping_coverage(self):
        with pytest.raises(CoverageMismatch):
            roc_curve({"a": 0.2}, {"a": 1, "b": 0})
        curve = roc_curve({"a": 0.9, "b": 0.1, "extra": 0.5}, {"a": 1, "b": 0})
        assert auc_trapezoid(curve) == 1.0


class TestAuc:
    def test_perfect(self):
        assert auc_trapezoid(roc_curve([0.9, 0.8, 0.1], [1, 1, 0])) == 1.0

    def test_all_identical(self):
        assert auc_trapezoid(roc_curve([0.5] * 8, [1, 0] * 4)) == 0.5

    def test_inverted(self):
        assert auc_trapezoid(roc_curve([0.1, 0.9], [1, 0])) == 0.0

    def test_mann_whitney_oracle(self):
        rng = np.random.default_rng(50)
        scores = rng.random(50)
        labels = (rng.random(50) < 0.4).astype(int)
        auc = auc_trapezoid(roc_curve(scores, labels))
        assert abs(auc - mann_whitney_auc(scores, labels)) <= 5e-3

    def test_exact_when_scores_on_grid(self, rng):
        # scores on the 1e-4 grid lose nothing to quantization
        for _ in range(20):
            s, y = random_score_set(rng)
            s = np.round(s, 4)
            assert auc_trapezoid(roc_curve(s, y)) == pytest.approx(mann_whitney_auc(s, y), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        s, y = random_score_set(rng)
        a = auc_trapezoid(roc_curve(s, y))
        # sqrt spreads scores apart, so grid quantization cannot merge them
        b = auc_trapezoid(roc_curve(np.sqrt(s), y))
        assert abs(a - b) <= 5e-3

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_label_swap(self, seed):
        rng = np.random.default_rng(seed)
        s, y = random_score_set(rng)
        a = auc_trapezoid(roc_curve(s, y))
        b = auc_trapezoid(roc_curve(s, 1 - y))
        assert 0.0 <= a <= 1.0
        assert abs(a + b - 1.0) <= 1e-2


class TestSensitivityAtSpecificity:
    def test_perfect(self):
        assert sensitivity_at_specificity(roc_curve([1.0, 0.9, 0.0], [1, 1, 0])) == 1.0

    def test_all_tied(self):
        assert sensitivity_at_specificity(roc_curve([0.5] * 10, [1, 0] * 5)) == 0.0

    def test_brute_force(self):
        rng = np.random.default_rng(20)
        scores = rng.random(20)
        labels = np.array([1, 0] * 10)
        curve = roc_curve(scores, labels)
        sens, spec = brute_force_rates(scores, labels, threshold_grid())
        expected = max(se for se, sp in zip(sens, spec) if sp >= 0.95)
        assert sensitivity_at_specificity(curve) == expected


def test_evaluate_result():
    res = evaluate([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0])
    assert res.n_positive == 2 and res.n_negative == 2
    assert res.auc == pytest.approx(0.75)
    assert set(res.to_dict()) == {"auc", "sens_at_95spec", "n_pos", "n_neg"}
