import numpy as np
import pytest
from scipy.special import expit

from modules.errors import InvalidInputError
from modules.metrics import error_rate, evaluate, max_logit_error, mean_logit_error
from modules.model import Policy, PreferenceDataset

from tests.conftest import make_dataset


class TestMetrics:

    def test_identical_policies_have_zero_error(self, small_dataset):
        theta = Policy(np.arange(small_dataset.dim, dtype=float))
        report = evaluate(small_dataset, theta, theta, 1.0, n_used=10)
        assert report.max_logit_error == 0.0
        assert report.mean_logit_error == 0.0
        assert report.error_rate == 0.0
        assert report.n_used == 10

    def test_known_values(self):
        dataset = PreferenceDataset(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([0.5, 0.0]))
        hat = Policy(np.array([1.0, 1.0]))
        star = Policy(np.array([0.0, 1.0]))
        # |φᵀΔθ| = [1, 0]
        assert max_logit_error(dataset, hat, star, 2.0) == pytest.approx(2.0)
        assert mean_logit_error(dataset, hat, star, 2.0) == pytest.approx(1.0)
        # 点0: φᵀθ̂ − b = 0.5 > 0、φᵀθ* − b = −0.5 < 0 で反転
        assert error_rate(dataset, hat, star, 2.0) == pytest.approx(0.5)

    def test_zero_logit_counts_as_positive(self):
        dataset = PreferenceDataset(np.array([[1.0]]), np.array([1.0]))
        assert error_rate(dataset, Policy(np.array([1.0])), Policy(np.array([2.0])), 1.0) == 0.0

    def test_error_rate_does_not_depend_on_beta(self, small_dataset):
        rng = np.random.default_rng(0)
        hat = Policy(rng.standard_normal(small_dataset.dim))
        star = Policy(rng.standard_normal(small_dataset.dim))
        assert error_rate(small_dataset, hat, star, 1.0) == error_rate(small_dataset, hat, star, 5.0)

    def test_empty_dataset_is_rejected(self):
        dataset = PreferenceDataset(np.zeros((0, 2)), np.zeros(0))
        with pytest.raises(InvalidInputError):
            max_logit_error(dataset, Policy.zeros(2), Policy.zeros(2), 1.0)

    def test_dimension_mismatch(self, small_dataset):
        with pytest.raises(InvalidInputError):
            evaluate(small_dataset, Policy.zeros(1), Policy.zeros(1), 1.0)


class TestLipschitzBound:

    def test_probability_gap_is_bounded_by_logit_error(self):
        rng = np.random.default_rng(6)
        violations = 0
        for trial in range(10_000):
            dim = int(rng.integers(1, 5))
            beta = float(rng.choice([0.5, 1.0, 2.0, 5.0]))
            dataset = make_dataset(n_points=8, dim=dim, seed=trial, with_feedback=False)
            hat = rng.standard_normal(dim) * 2
            star = rng.standard_normal(dim) * 2
            mu_hat = expit(beta * (dataset.phi @ hat - dataset.bias))
            mu_star = expit(beta * (dataset.phi @ star - dataset.bias))
            gap = 4 * np.max(np.abs(mu_hat - mu_star))
            bound = max_logit_error(dataset, Policy(hat), Policy(star), beta)
            violations += int(gap > bound * (1 + 1e-12) + 1e-15)
        assert violations == 0
