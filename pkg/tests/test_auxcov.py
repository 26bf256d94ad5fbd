"""
Tests for AuxCov completion, cross-validated tuning and bootstrap standard errors.
"""

from dataclasses import replace

import numpy as np
import pytest

from modules.auxcov import (
    auxcov_cv,
    bootstrap_nonparametric,
    bootstrap_parametric,
    check_alpha_grid,
    cross_validate,
    prepare_auxcov,
    run_auxcov,
    select_grid_point,
    split_folds,
)
from modules.corestats import is_positive_definite, observed_sample_covariance, pd_correction
from modules.dataset import AuxiliaryCovariates, IncompleteDataset, build_pattern
from modules.psi import measurement_error_covariance
from modules.regression import RegressionSpec
from utils.errors import (
    AllFoldsDegenerate,
    DimensionMismatch,
    DomainError,
    FoldTooSmall,
    GridEmpty,
    InputError,
    NoAuxCoverage,
    NonPDBlock,
    NumericalError,
    ReplicateFailure,
)


class TestRunAuxCov:

    def test_alpha_zero_keeps_observed_correlations(self, truth, complete_data):
        cov = observed_sample_covariance(complete_data)
        result = run_auxcov(cov, truth.aux, 0.0, RegressionSpec.ols())
        d = np.sqrt(cov.diagonal)

        assert result.diagnostics.completed_pd_steps == 0
        np.testing.assert_allclose(result.final_corr, cov.values / np.outer(d, d), rtol=1e-12, atol=1e-15)

    def test_alpha_one_gives_baseline(self, truth, two_block_data):
        cov = observed_sample_covariance(two_block_data)
        result = run_auxcov(cov, truth.aux, 1.0, RegressionSpec.ols())

        np.testing.assert_array_equal(result.final_corr, result.baseline_corr)

    def test_final_covariance_keeps_observed_variances(self, truth, two_block_data):
        cov = observed_sample_covariance(two_block_data)
        result = run_auxcov(cov, truth.aux, 0.4, RegressionSpec.ols())

        np.testing.assert_array_equal(np.diag(result.final_cov), cov.diagonal)
        assert is_positive_definite(result.final_cov)
        np.testing.assert_allclose(result.final_cov, result.final_cov.T)

    def test_affine_in_alpha(self, truth, two_block_data):
        fit = prepare_auxcov(observed_sample_covariance(two_block_data), truth.aux, RegressionSpec.ols())
        lam, a1, a2 = 0.3, 0.1, 0.9

        np.testing.assert_allclose(fit.corr_at(lam * a1 + (1 - lam) * a2),
                                   lam * fit.corr_at(a1) + (1 - lam) * fit.corr_at(a2), atol=1e-14)

    def test_unobserved_entries_do_not_depend_on_alpha(self, truth, two_block_data):
        fit = prepare_auxcov(observed_sample_covariance(two_block_data), truth.aux, RegressionSpec.ols())
        if fit.diagnostics.baseline_pd_steps or fit.diagnostics.completed_pd_steps:
            pytest.skip("PD correction fired on this draw")
        unobserved = ~fit.observed_corr.observed

        np.testing.assert_allclose(fit.corr_at(0.2)[unobserved], fit.corr_at(0.8)[unobserved], atol=1e-14)

    def test_matches_direct_computation(self):
        # V1 = {0,1,2}, V2 = {1,2,3}; (0,3) is the only unobserved pair
        rng = np.random.default_rng(21)
        sigma = np.array([[1.0, 0.5, 0.3, 0.2],
                          [0.5, 1.0, 0.4, 0.3],
                          [0.3, 0.4, 1.0, 0.5],
                          [0.2, 0.3, 0.5, 1.0]])
        values = rng.multivariate_normal(np.zeros(4), sigma, size=60)
        data = IncompleteDataset.from_blocks([values[:30, :3], values[30:, 1:]], [(0, 1, 2), (1, 2, 3)])
        W = np.array([[0.0, 0.9, 0.4, 0.1],
                      [0.9, 0.0, 0.6, 0.5],
                      [0.4, 0.6, 0.0, 0.8],
                      [0.1, 0.5, 0.8, 0.0]])
        result = run_auxcov(observed_sample_covariance(data), AuxiliaryCovariates.from_matrix(W), 0.5,
                            RegressionSpec.ols())

        full = data.values
        mean = np.nanmean(full, axis=0)
        S = np.full((4, 4), np.nan)
        for i in range(4):
            for j in range(4):
                both = ~np.isnan(full[:, i]) & ~np.isnan(full[:, j])
                if both.any():
                    S[i, j] = np.mean((full[both, i] - mean[i]) * (full[both, j] - mean[j]))
        C_hat = S / np.sqrt(np.outer(np.diag(S), np.diag(S)))
        pairs = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]
        y = np.array([np.arctanh(C_hat[i, j]) for i, j in pairs])
        X = np.column_stack([np.ones(5), [W[i, j] for i, j in pairs]])
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
        C_bar = np.tanh(beta[0] + beta[1] * W)
        np.fill_diagonal(C_bar, 1.0)
        C_tilde = C_bar.copy()
        for i, j in pairs:
            C_tilde[i, j] = C_tilde[j, i] = C_hat[i, j]
        C_half = 0.5 * pd_correction(C_bar) + 0.5 * pd_correction(C_tilde)
        np.fill_diagonal(C_half, 1.0)
        sd = np.sqrt(np.diag(S))

        np.testing.assert_allclose(result.model.beta, beta, atol=1e-10)
        np.testing.assert_allclose(result.final_corr, C_half, atol=1e-10)
        np.testing.assert_allclose(result.final_cov, C_half * np.outer(sd, sd), atol=1e-10)

    def test_missing_covariates_for_unobserved_pair(self, truth, two_block_data):
        values = truth.aux.values.copy()
        values[truth.aux.pair_index(np.array([0]), np.array([5]))] = np.nan
        aux = AuxiliaryCovariates(p=6, values=values)

        with pytest.raises(NoAuxCoverage):
            run_auxcov(observed_sample_covariance(two_block_data), aux, 0.5, RegressionSpec.ols())

    def test_observed_pair_without_covariates_keeps_its_correlation(self, truth, two_block_data):
        values = truth.aux.values.copy()
        values[truth.aux.pair_index(np.array([2]), np.array([3]))] = np.nan
        aux = AuxiliaryCovariates(p=6, values=values)
        fit = prepare_auxcov(observed_sample_covariance(two_block_data), aux, RegressionSpec.ols())

        assert fit.diagnostics.n_uncovered_observed == 1
        assert fit.raw_baseline[2, 3] == fit.observed_corr.values[2, 3]

    def test_dimension_and_alpha_checks(self, truth, two_block_data):
        cov = observed_sample_covariance(two_block_data)
        with pytest.raises(DimensionMismatch):
            run_auxcov(cov, AuxiliaryCovariates(p=3, values=np.zeros(3)), 0.5, RegressionSpec.ols())
        with pytest.raises(DomainError):
            run_auxcov(cov, truth.aux, 1.5, RegressionSpec.ols())

    def test_gls_and_splines_baselines(self, truth, two_block_data):
        cov = observed_sample_covariance(two_block_data)
        gls = run_auxcov(cov, truth.aux, 0.5, RegressionSpec.gls(), data=two_block_data)
        splines = run_auxcov(cov, truth.aux, 0.5, RegressionSpec.splines(1))

        assert gls.model.kind == "gls"
        assert gls.diagnostics.phi_substitution == "none"
        assert splines.model.kind == "splines"
        assert is_positive_definite(gls.final_cov) and is_positive_definite(splines.final_cov)

    def test_phi_substitution_reported_only_when_used(self, truth, two_block_data):
        cov = observed_sample_covariance(two_block_data)
        empirical = run_auxcov(cov, truth.aux, 0.5, RegressionSpec.gls(phi_estimator="empirical"),
                               data=two_block_data)
        phi = measurement_error_covariance(cov)
        supplied = run_auxcov(cov, truth.aux, 0.5, RegressionSpec.gls(), phi=phi)

        assert empirical.diagnostics.phi_substitution == "none"
        assert supplied.diagnostics.phi_substitution is None
        np.testing.assert_allclose(
            supplied.final_cov,
            run_auxcov(cov, truth.aux, 0.5, RegressionSpec.gls(), data=two_block_data).final_cov)


class TestGridSelection:

    def test_ties_prefer_small_alpha_then_small_tau(self):
        specs = [RegressionSpec.splines(4), RegressionSpec.splines(2)]
        risk = np.ones((2, 3))

        assert select_grid_point(risk, np.array([0.5, 0.0, 1.0]), specs) == (1, 1)

    def test_nan_cells_ignored(self):
        specs = [RegressionSpec.ols()]
        risk = np.array([[np.nan, 2.0, 1.0]])

        assert select_grid_point(risk, np.array([0.0, 0.5, 1.0]), specs) == (0, 2)
        with pytest.raises(AllFoldsDegenerate):
            select_grid_point(np.full((1, 3), np.nan), np.array([0.0, 0.5, 1.0]), specs)

    def test_alpha_grid_validation(self):
        assert check_alpha_grid([0.0, 1.0]).tolist() == [0.0, 1.0]
        with pytest.raises(GridEmpty):
            check_alpha_grid([])
        with pytest.raises(DomainError):
            check_alpha_grid([0.0, 1.5])


class TestCrossValidation:

    def test_folds_partition_each_block(self):
        pattern = build_pattern([[0, 1], [1, 2]], [23, 17])
        folds = split_folds(pattern, 5, seed=3)

        assert len(folds) == 5
        for k, n_k in enumerate(pattern.counts):
            test_rows = np.concatenate([test[k] for _, test in folds])
            assert sorted(test_rows.tolist()) == list(range(n_k))
        train, test = folds[0]
        assert set(train[0]).isdisjoint(test[0])

    def test_fold_too_small(self):
        pattern = build_pattern([[0, 1], [1, 2]], [3, 50])
        with pytest.raises(FoldTooSmall):
            split_folds(pattern, 5, seed=0)
        with pytest.raises(InputError):
            split_folds(pattern, 1, seed=0)

    def test_single_alpha_grid(self, truth, two_block_data):
        report = cross_validate(two_block_data, truth.aux, [RegressionSpec.ols()], [0.3], n_folds=3, threads=1)

        assert report.selected_alpha == 0.3
        assert report.risk.shape == (1, 1)

    def test_deterministic_given_seed(self, truth, two_block_data):
        specs = [RegressionSpec.splines(1), RegressionSpec.splines(2)]
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
        first = cross_validate(two_block_data, truth.aux, specs, grid, n_folds=4, seed=7, threads=1)
        second = cross_validate(two_block_data, truth.aux, specs, grid, n_folds=4, seed=7, threads=2)

        np.testing.assert_array_equal(first.risk, second.risk)
        assert first.selected == second.selected
        assert len(first.risk_curve()) == 10

    def test_absolute_loss_and_report(self, truth, two_block_data):
        report = cross_validate(two_block_data, truth.aux, [RegressionSpec.ols()], [0.0, 0.5, 1.0],
                                n_folds=3, loss="absolute", threads=1)
        summary = report.to_dict()

        assert summary["alpha_cv"] in (0.0, 0.5, 1.0)
        assert summary["model_cv"] == "ols"
        assert summary["folds"] == 3
        with pytest.raises(InputError):
            cross_validate(two_block_data, truth.aux, [RegressionSpec.ols()], [0.5], n_folds=3, loss="huber")

    def test_fold_loss_counts_each_pair_once(self, truth, two_block_data):
        # 6 + 6 - 1 observed pairs i < j across the windows {0..3} and {2..5}
        report = cross_validate(two_block_data, truth.aux, [RegressionSpec.ols()], [0.0, 1.0], n_folds=2,
                                loss=lambda estimate, target: float(estimate.size), threads=1)

        np.testing.assert_array_equal(report.risk, [[11.0, 11.0]])

    def test_squared_loss_over_unordered_pairs(self, truth, two_block_data):
        folds = split_folds(two_block_data.pattern, 2, seed=3)
        train_rows, test_rows = folds[0]
        train, test = two_block_data.take(train_rows), two_block_data.take(test_rows)
        fit = prepare_auxcov(observed_sample_covariance(train), truth.aux, RegressionSpec.ols(), data=train)
        held_out = observed_sample_covariance(test)
        d = np.sqrt(held_out.diagonal)
        rows, cols = held_out.pair_sets.upper
        target = held_out.values[rows, cols] / (d[rows] * d[cols])
        expected = np.sum((fit.corr_at(0.5)[rows, cols] - target) ** 2)

        report = cross_validate(two_block_data, truth.aux, [RegressionSpec.ols()], [0.5], n_folds=2, seed=3,
                                threads=1)
        assert report.fold_losses[0, 0, 0] == pytest.approx(expected, rel=1e-10)

    def test_failing_model_dropped(self, truth, two_block_data):
        # 40 spline knots cannot be fitted on 11 observed pairs
        specs = [RegressionSpec.splines(40), RegressionSpec.ols()]
        report = cross_validate(two_block_data, truth.aux, specs, [0.0, 1.0], n_folds=3, threads=1)

        assert report.selected_spec.kind == "ols"
        assert [label for label, _ in report.failed] == ["splines(tau=40)"]
        assert np.isnan(report.risk[0]).all()

    def test_auxcov_cv_attaches_report(self, truth, two_block_data):
        result = auxcov_cv(two_block_data, truth.aux, [RegressionSpec.ols()], [0.0, 0.5, 1.0], n_folds=3,
                           threads=1)

        assert result.cv is not None
        assert result.alpha == result.cv.selected_alpha
        assert result.to_dict()["alpha_cv"] == result.alpha

    @pytest.mark.slow
    def test_alpha_tracks_signal_strength(self):
        from modules.simlab import generate_ground_truth, inject_missingness

        selected = {}
        for gamma in (0.1, 0.9):
            alphas = []
            for replicate in range(20):
                truth = generate_ground_truth(30, gamma, seed=1000 + replicate)
                data = inject_missingness(truth.Sigma, 500, 2, 0.1, seed=2000 + replicate)
                report = cross_validate(data, truth.aux, [RegressionSpec.ols()], np.linspace(0, 1, 21),
                                        n_folds=5, seed=replicate, threads=1)
                alphas.append(report.selected_alpha)
            selected[gamma] = np.mean(alphas)

        assert selected[0.9] > selected[0.1]


class TestBootstrap:

    def setup_method(self):
        self.specs = [RegressionSpec.ols()]
        self.grid = [0.0, 0.5, 1.0]

    def test_two_replicates(self, truth, two_block_data):
        report = bootstrap_nonparametric(two_block_data, truth.aux, self.specs, self.grid, n_folds=2,
                                         B=2, seed=4, threads=1)

        first, second = report.replicates
        np.testing.assert_allclose(report.se, np.abs(first - second) / np.sqrt(2.0), rtol=1e-12)
        assert report.se.shape == (6, 6)
        assert report.n_skipped == 0

    def test_deterministic_and_exchangeable(self, truth, two_block_data):
        kwargs = dict(alpha_grid=self.grid, n_folds=2, B=3, seed=4)
        first = bootstrap_nonparametric(two_block_data, truth.aux, self.specs, threads=1, **kwargs)
        second = bootstrap_nonparametric(two_block_data, truth.aux, self.specs, threads=3, **kwargs)
        permuted = bootstrap_nonparametric(two_block_data, truth.aux, self.specs, threads=1,
                                           replicate_ids=[2, 0, 1], **kwargs)

        np.testing.assert_array_equal(first.se, second.se)
        np.testing.assert_allclose(permuted.se, first.se, rtol=1e-12, atol=1e-15)
        assert set(permuted.replicate_ids) == set(first.replicate_ids)

    def test_constant_functional(self, truth, two_block_data):
        report = bootstrap_nonparametric(two_block_data, truth.aux, self.specs, self.grid, n_folds=2,
                                         phi=lambda cov: 1.0, B=3, threads=1)

        assert report.se == 0.0

    def test_correlation_functional_has_zero_diagonal_se(self, truth, two_block_data):
        report = bootstrap_nonparametric(two_block_data, truth.aux, self.specs, self.grid, n_folds=2,
                                         phi="entrywise-corr", B=3, threads=1)

        np.testing.assert_allclose(np.diag(report.se), 0.0, atol=1e-12)

    def test_replicate_failures(self, truth, two_block_data):
        def fails(cov):
            raise NumericalError("functional undefined")

        with pytest.raises(ReplicateFailure):
            bootstrap_nonparametric(two_block_data, truth.aux, self.specs, self.grid, n_folds=2,
                                    phi=fails, B=3, threads=1)
        with pytest.raises(InputError):
            bootstrap_nonparametric(two_block_data, truth.aux, self.specs, self.grid, n_folds=2, B=1)
        with pytest.raises(InputError):
            bootstrap_nonparametric(two_block_data, truth.aux, self.specs, self.grid, n_folds=2,
                                    phi="trace", B=2)

    def test_parametric(self, truth, two_block_data):
        fit = auxcov_cv(two_block_data, truth.aux, self.specs, self.grid, n_folds=2, threads=1)
        report = bootstrap_parametric(fit, two_block_data.pattern, truth.aux, self.specs, self.grid,
                                      n_folds=2, B=3, seed=1, threads=1)

        assert report.variant == "parametric"
        assert np.all(report.se >= 0)
        assert len(report.alphas) == 3

    def test_parametric_needs_pd_blocks(self, truth, two_block_data):
        fit = auxcov_cv(two_block_data, truth.aux, self.specs, self.grid, n_folds=2, threads=1)
        broken = replace(fit, final_cov=-np.eye(6))

        with pytest.raises(NonPDBlock):
            bootstrap_parametric(broken, two_block_data.pattern, truth.aux, self.specs, self.grid,
                                 n_folds=2, B=2)

    def test_known_mean_is_used_by_every_replicate(self, truth, two_block_data):
        subsets = two_block_data.pattern.subsets
        blocks = [two_block_data.block(k) for k in range(2)]
        shifted = IncompleteDataset.from_blocks([block + 3.0 for block in blocks], subsets, 6)
        kwargs = dict(alpha_grid=self.grid, n_folds=2, B=3, seed=4, threads=1)

        empirical = bootstrap_nonparametric(shifted, truth.aux, self.specs, **kwargs)
        wrong_mean = bootstrap_nonparametric(shifted, truth.aux, self.specs, mean=np.zeros(6), **kwargs)
        right_mean = bootstrap_nonparametric(shifted, truth.aux, self.specs, mean=np.full(6, 3.0), **kwargs)
        unshifted = bootstrap_nonparametric(two_block_data, truth.aux, self.specs, mean=np.zeros(6), **kwargs)

        assert not np.allclose(wrong_mean.se, empirical.se)
        # centering the shifted data at its known mean reproduces the unshifted run
        np.testing.assert_allclose(right_mean.se, unshifted.se, rtol=1e-7, atol=1e-10)

    def test_parametric_draws_centred_on_known_mean(self, truth, two_block_data):
        subsets = two_block_data.pattern.subsets
        mu = np.linspace(2.0, 7.0, 6)
        shifted = IncompleteDataset.from_blocks(
            [two_block_data.block(k) + mu[list(subsets[k])] for k in range(2)], subsets, 6)
        fit = auxcov_cv(shifted, truth.aux, self.specs, self.grid, n_folds=2, threads=1, mean=mu)
        report = bootstrap_parametric(fit, shifted.pattern, truth.aux, self.specs, self.grid, n_folds=2,
                                      B=4, seed=2, threads=1, mean=mu)
        variances = report.replicates[:, np.arange(6), np.arange(6)].mean(axis=0)

        np.testing.assert_allclose(variances, np.diag(fit.final_cov), rtol=0.3)
        with pytest.raises(DimensionMismatch):
            bootstrap_parametric(fit, shifted.pattern, truth.aux, self.specs, self.grid, n_folds=2, B=2,
                                 mean=np.zeros(3))

    def test_near_deterministic_variance_has_zero_se(self, truth, two_block_data):
        subsets = two_block_data.pattern.subsets
        tiny = IncompleteDataset.from_blocks([1e-6 * two_block_data.block(k) for k in range(2)], subsets, 6)
        report = bootstrap_nonparametric(tiny, truth.aux, self.specs, self.grid, n_folds=2,
                                         phi=lambda cov: cov[0, 0], B=5, seed=3, threads=1)

        assert report.se < 1e-5
        assert report.se >= 0.0

    @pytest.mark.slow
    def test_parametric_null_correlation_se(self, truth, two_block_data):
        fit = auxcov_cv(two_block_data, truth.aux, self.specs, [0.0], n_folds=2, threads=1)
        null = replace(fit, final_cov=np.eye(6))
        report = bootstrap_parametric(null, two_block_data.pattern, truth.aux, self.specs, [0.0], n_folds=2,
                                      phi="entrywise-corr", B=400, seed=5, threads=1)

        counts = two_block_data.pattern.pair_counts
        rows, cols = np.triu_indices(6, 1)
        observed = counts[rows, cols] >= 2
        expected = 1.0 / np.sqrt(counts[rows, cols][observed])
        np.testing.assert_allclose(report.se[rows, cols][observed], expected, rtol=0.25)

    @pytest.mark.slow
    def test_bootstrap_tracks_monte_carlo_se(self, truth):
        # unequal blocks spread the true standard errors apart
        subsets = [(0, 1, 2, 3), (2, 3, 4, 5)]
        counts = (100, 900)

        def draw(seed):
            rng = np.random.default_rng(seed)
            blocks = [rng.multivariate_normal(np.zeros(6), truth.Sigma, size=n_k)[:, list(subset)]
                      for n_k, subset in zip(counts, subsets)]
            return IncompleteDataset.from_blocks(blocks, subsets, 6)

        estimates = np.stack([auxcov_cv(draw(100 + r), truth.aux, self.specs, self.grid, n_folds=2,
                                        seed=r, threads=1).final_cov for r in range(100)])
        se_mc = estimates.std(axis=0, ddof=1)
        rows, cols = np.triu_indices(6)

        for variant in ("nonparametric", "parametric"):
            data = draw(7)
            if variant == "nonparametric":
                report = bootstrap_nonparametric(data, truth.aux, self.specs, self.grid, n_folds=2, B=100,
                                                 seed=8, threads=1)
            else:
                fit = auxcov_cv(data, truth.aux, self.specs, self.grid, n_folds=2, threads=1)
                report = bootstrap_parametric(fit, data.pattern, truth.aux, self.specs, self.grid, n_folds=2,
                                              B=100, seed=8, threads=1)
            agreement = np.corrcoef(report.se[rows, cols], se_mc[rows, cols])[0, 1]
            assert agreement > 0.7, variant
