import numpy as np
import pytest

from deepcoreg.metrics import MetricsReport, coverage_and_length, evaluate_predictions, rmspe


class TestRmspe:
    def test_perfect_prediction(self):
        assert rmspe([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_unit_offset(self):
        assert rmspe([0.0, 0.0], [1.0, 1.0]) == pytest.approx(1.0)

    def test_hand_arithmetic(self):
        # sqrt((1 + 4) / 2)
        assert rmspe([0.0, 2.0], [1.0, 0.0]) == pytest.approx(np.sqrt(2.5))
        assert rmspe([0.0, 2.0], [1.0, 0.0]) == pytest.approx(1.5811, abs=1e-4)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        y, p = rng.normal(size=40), rng.normal(size=40)
        perm = rng.permutation(40)
        assert rmspe(y, p) == pytest.approx(rmspe(y[perm], p[perm]), rel=1e-12)

    def test_absolute_homogeneity(self):
        rng = np.random.default_rng(1)
        y, p = rng.normal(size=25), rng.normal(size=25)
        for c in (-3.0, 0.5, 2.0):
            assert rmspe(c * y, c * p) == pytest.approx(abs(c) * rmspe(y, p), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmspe([1.0, 2.0], [1.0])


class TestCoverageAndLength:
    def test_all_covered(self):
        cov, length = coverage_and_length([0.0, 1.0], [-100.0, -100.0], [100.0, 100.0])
        assert cov == 1.0
        assert length == pytest.approx(200.0)

    def test_hand_arithmetic(self):
        # truth (0, 10): [-1, 1] covers, [0, 1] misses -> coverage 0.5, length 1.5
        cov, length = coverage_and_length([0.0, 10.0], [-1.0, 0.0], [1.0, 1.0])
        assert cov == 0.5
        assert length == pytest.approx(1.5)

    def test_degenerate_intervals(self):
        cov, length = coverage_and_length([2.0, 3.0], [2.0, 3.0], [2.0, 3.0])
        assert cov == 1.0
        assert length == 0.0

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ValueError):
            coverage_and_length([0.0], [1.0], [0.0])


class TestReport:
    def test_evaluate_predictions(self):
        y = np.array([[0.0, 1.0], [2.0, -1.0], [4.0, 0.0]])
        mu = y + np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]])
        lo, hi = mu - 0.5, mu + 0.5
        rep = evaluate_predictions(y, mu, lo, hi)
        assert rep.n_test == 3
        assert rep.rmspe[0] == pytest.approx(np.sqrt(2.0 / 3.0))
        assert rep.rmspe[1] == 0.0
        assert rep.coverage == [pytest.approx(1.0 / 3.0), 1.0]
        assert rep.mean_length == [pytest.approx(1.0), pytest.approx(1.0)]

    def test_validation(self):
        with pytest.raises(ValueError):
            MetricsReport([1.0], [1.5], [1.0], n_test=5)
        with pytest.raises(ValueError):
            MetricsReport([-0.1], [0.5], [1.0], n_test=5)
        with pytest.raises(ValueError):
            MetricsReport([1.0, 2.0], [0.5], [1.0], n_test=5)

    def test_interval_calibration_on_gaussian_truth(self):
        # intervals built from the true generative distribution cover ~95%
        rng = np.random.default_rng(42)
        n = 500
        mu = rng.normal(size=n)
        sigma = 0.7
        y = mu + rng.normal(0, sigma, n)
        half = 1.959963984540054 * sigma
        cov, _ = coverage_and_length(y, mu - half, mu + half)
        assert abs(cov - 0.95) <= 0.03
