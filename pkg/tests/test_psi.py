"""
Tests for the asymptotic covariance Psi of Fisher-transformed observed correlations.
"""

import numpy as np
import pytest

from config.settings import Config
from modules.corestats import PartialSymmetricMatrix, empirical_fourth_moments, observed_sample_covariance
from modules.dataset import IncompleteDataset, build_pattern, pair_sets
from modules.psi import (
    c_weight,
    measurement_error_covariance,
    overlap_weights,
    psi_empirical,
    psi_gaussian,
    psi_oracle,
)
from modules.simlab import inject_missingness
from utils.errors import InputError, MissingMomentEntry, PairLimitExceeded, SingularSigma


class TestOverlapWeights:

    def test_complete_data_weights_are_one(self):
        pattern = build_pattern([[0, 1, 2]], [20])

        assert c_weight(pattern, (0, 1), (1, 2)) == pytest.approx(1.0)
        np.testing.assert_allclose(overlap_weights(pair_sets(pattern)), 1.0)

    def test_disjoint_pairs(self):
        pattern = build_pattern([[0, 1], [2, 3]], [10, 10])

        assert c_weight(pattern, (0, 1), (2, 3)) == 0.0

    def test_nested_pairs(self):
        # (0,1) only in V1, (1,2) in both blocks of equal size
        pattern = build_pattern([[0, 1, 2], [1, 2]], [5, 5])

        assert c_weight(pattern, (0, 1), (1, 2)) == pytest.approx(1.0)

    def test_symmetry(self):
        pattern = build_pattern([[0, 1, 2], [1, 2, 3], [0, 3]], [4, 7, 9])
        weights = overlap_weights(pair_sets(pattern))

        np.testing.assert_allclose(weights, weights.T)
        assert c_weight(pattern, (0, 1), (1, 2)) == pytest.approx(c_weight(pattern, (1, 2), (0, 1)))


class TestPsiOracle:

    def test_bivariate_gaussian_is_unit(self):
        pattern = build_pattern([[0, 1]], [100])
        for rho in (0.0, 0.6, -0.9):
            sigma = np.array([[1.0, rho], [rho, 1.0]])
            psi = psi_oracle(pattern, sigma).psi

            assert psi.shape == (1, 1)
            assert psi[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_scale_free(self):
        pattern = build_pattern([[0, 1]], [100])
        sigma = np.array([[4.0, 1.2], [1.2, 9.0]])

        assert psi_oracle(pattern, sigma).psi[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_independent_coordinates(self):
        pattern = build_pattern([[0, 1, 2, 3]], [50])
        psi = psi_oracle(pattern, np.diag([1.0, 2.0, 3.0, 4.0])).psi

        np.testing.assert_allclose(psi, np.eye(6), atol=1e-12)

    def test_symmetric_and_sized_by_upper_pairs(self, truth):
        pattern = build_pattern([[0, 1, 2, 3], [2, 3, 4, 5]], [100, 100])
        components = psi_oracle(pattern, truth.Sigma)

        assert components.psi.shape == (components.u_pairs[0].size,) * 2
        np.testing.assert_array_equal(components.psi, components.psi.T)
        assert components.J.shape == (components.u_pairs[0].size, components.ubar_pairs[0].size)

    def test_singular_sigma(self):
        pattern = build_pattern([[0, 1]], [10])
        with pytest.raises(SingularSigma):
            psi_oracle(pattern, np.ones((2, 2)))

    def test_pair_limit(self, monkeypatch):
        monkeypatch.setattr(Config, "DENSE_PAIR_LIMIT", 2)
        pattern = build_pattern([[0, 1, 2]], [10])
        with pytest.raises(PairLimitExceeded):
            psi_oracle(pattern, np.eye(3))

    @pytest.mark.slow
    def test_matches_monte_carlo(self, truth):
        n, draws = 2000, 4000
        pattern = build_pattern([[0, 1, 2, 3], [2, 3, 4, 5]], [n // 2, n // 2])
        sets = pair_sets(pattern)
        rows, cols = sets.upper
        factor = np.linalg.cholesky(truth.Sigma)
        rng = np.random.default_rng(9)
        z = np.empty((draws, rows.size))
        for d in range(draws):
            values = rng.standard_normal((n, 6)) @ factor.T
            blocks = [values[:n // 2, :4], values[n // 2:, 2:]]
            data = IncompleteDataset.from_blocks(blocks, pattern.subsets, 6)
            cov = observed_sample_covariance(data, sets=sets).values
            scale = 1.0 / np.sqrt(np.diag(cov))
            z[d] = np.arctanh((cov * np.outer(scale, scale))[rows, cols])
        psi = psi_oracle(pattern, truth.Sigma, sets=sets).psi
        scaled = n * np.cov(z, rowvar=False)

        assert np.linalg.norm(psi - scaled) / np.linalg.norm(psi) < 0.1


class TestPsiEstimators:

    def test_unobserved_quadruple_is_zero(self):
        rng = np.random.default_rng(0)
        blocks = [rng.normal(size=(30, 2)), rng.normal(size=(30, 2))]
        data = IncompleteDataset.from_blocks(blocks, [(0, 1), (2, 3)], 4)
        cov = observed_sample_covariance(data)
        components = psi_empirical(data, cov)

        index = cov.pair_sets.ubar_index
        assert components.H[index[0, 1], index[2, 3]] == 0.0
        assert components.psi[0, 1] == 0.0

    def test_gaussian_identity_diagonal(self):
        pattern = build_pattern([[0, 1, 2]], [40])
        cov = PartialSymmetricMatrix(values=np.eye(3), pair_sets=pair_sets(pattern))
        components = psi_gaussian(pattern, cov)
        index = cov.pair_sets.ubar_index

        for i, j in ((0, 1), (0, 2), (1, 2)):
            assert components.H[index[i, j], index[i, j]] == pytest.approx(1.0)

    def test_builders_agree_on_complete_data(self):
        rng = np.random.default_rng(1)
        values = rng.multivariate_normal(np.zeros(3), [[1.0, 0.4, 0.2], [0.4, 1.0, 0.3], [0.2, 0.3, 1.0]],
                                         size=200)
        data = IncompleteDataset.from_array(values)
        cov = observed_sample_covariance(data)
        sample = cov.as_dense()
        centered = values - values.mean(axis=0)

        empirical = psi_empirical(data, cov).psi
        plugged = psi_oracle(data.pattern, sample, fourth_moments=empirical_fourth_moments(centered)).psi
        np.testing.assert_allclose(empirical, plugged, rtol=1e-10, atol=1e-12)

        gaussian = psi_gaussian(data.pattern, cov).psi
        np.testing.assert_allclose(gaussian, psi_oracle(data.pattern, sample).psi, rtol=1e-10, atol=1e-12)

    def test_block_patterns_need_no_substitution(self, two_block_data):
        # pairs sharing a block have all cross terms inside that block
        cov = observed_sample_covariance(two_block_data)
        strict = psi_gaussian(two_block_data.pattern, cov, policy="strict")
        zero = psi_gaussian(two_block_data.pattern, cov, policy="zero")
        baseline = psi_gaussian(two_block_data.pattern, cov, baseline_corr=np.eye(6))

        assert strict.n_substituted == zero.n_substituted == 0
        assert baseline.substitution == "baseline"
        np.testing.assert_array_equal(baseline.psi, strict.psi)
        with pytest.raises(InputError):
            psi_gaussian(two_block_data.pattern, cov, policy="baseline")
        with pytest.raises(InputError):
            psi_gaussian(two_block_data.pattern, cov, policy="nearest")

    def test_thin_pair_cross_terms(self):
        # (0, 2) has a single joint sample, so it leaves O but still links (0,1) and (1,2)
        pattern = build_pattern([[0, 1, 2], [0, 1], [1, 2]], [1, 10, 10])
        sigma = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]])
        cov = PartialSymmetricMatrix(values=sigma, pair_sets=pair_sets(pattern))

        with pytest.raises(MissingMomentEntry):
            psi_gaussian(pattern, cov, policy="strict")
        zero = psi_gaussian(pattern, cov, policy="zero")
        assert zero.n_substituted > 0

        baseline = np.array([[1.0, 0.3, 0.5], [0.3, 1.0, 0.2], [0.5, 0.2, 1.0]])
        filled = psi_gaussian(pattern, cov, baseline_corr=baseline)
        assert filled.psi[0, 1] != pytest.approx(zero.psi[0, 1])

    def test_measurement_error_covariance_scales_by_n(self, two_block_data):
        cov = observed_sample_covariance(two_block_data)
        phi = measurement_error_covariance(cov, two_block_data, estimator="empirical")

        np.testing.assert_allclose(phi * two_block_data.n, psi_empirical(two_block_data, cov).psi)
        with pytest.raises(InputError):
            measurement_error_covariance(cov, estimator="empirical")

    def test_pair_labels(self):
        pattern = build_pattern([[0, 1, 2]], [10])
        cov = PartialSymmetricMatrix(values=np.eye(3), pair_sets=pair_sets(pattern))

        assert psi_gaussian(pattern, cov).pair_labels(["a", "b", "c"]) == ["a:b", "a:c", "b:c"]

    def test_measurement_error_covariance_reports_substitution(self):
        pattern = build_pattern([[0, 1, 2], [0, 1], [1, 2]], [1, 10, 10])
        sigma = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]])
        cov = PartialSymmetricMatrix(values=sigma, pair_sets=pair_sets(pattern))
        phi, components = measurement_error_covariance(cov, return_components=True)

        assert components.substitution == "zero"
        assert components.n_substituted > 0
        np.testing.assert_allclose(phi, components.psi / 21)

    @pytest.mark.slow
    def test_empirical_converges_to_oracle(self, truth):
        def median_error(n):
            errors = []
            for replicate in range(10):
                data = inject_missingness(truth.Sigma, n, K=2, eta=0.2, seed=300 + replicate)
                cov = observed_sample_covariance(data)
                oracle = psi_oracle(data.pattern, truth.Sigma, sets=cov.pair_sets).psi
                estimate = psi_empirical(data, cov).psi
                errors.append(np.median(np.abs(estimate - oracle) / (np.abs(oracle) + 0.01)))
            return np.mean(errors)

        assert median_error(5000) < median_error(500)

    @pytest.mark.slow
    def test_gaussian_plug_in_varies_less_than_empirical(self, truth):
        gaussian, empirical = [], []
        for replicate in range(20):
            data = inject_missingness(truth.Sigma, 500, K=2, eta=0.2, seed=400 + replicate)
            cov = observed_sample_covariance(data)
            gaussian.append(psi_gaussian(data.pattern, cov).psi)
            empirical.append(psi_empirical(data, cov).psi)

        rows, cols = np.triu_indices(gaussian[0].shape[0])
        spread_gaussian = np.var(gaussian, axis=0)[rows, cols]
        spread_empirical = np.var(empirical, axis=0)[rows, cols]
        assert np.mean(spread_gaussian <= spread_empirical) >= 0.7
