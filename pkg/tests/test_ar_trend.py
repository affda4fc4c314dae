"""Tests for the trend plus AR(p) model, its sampler and closed-form oracles."""

import json
import math
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np
from scipy import stats

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import ar_trend  # noqa: E402
import model_api  # noqa: E402
import simlab  # noqa: E402
from ar_trend import ArTrendParams, ArTrendPriors, ArTrendSpec  # noqa: E402
from model_api import SamplerConfig, TimeSeries  # noqa: E402

REPO_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SMALL_SAMPLER = SamplerConfig(chains=4, warmup=400, draws=250)


def _trend_series(n, seed, b=(1.0, 2.0), sigma=1.0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n)
    y = np.polyval(list(reversed(b)), t) + sigma * rng.standard_normal(n)
    return TimeSeries(y=y)


class TimeRescaleTests(unittest.TestCase):

    def test_first_and_last(self) -> None:
        scaled = ar_trend.time_rescale(np.arange(1, 201))
        self.assertEqual(scaled[0], 0.0)
        self.assertEqual(scaled[-1], 1.0)

    def test_three_points(self) -> None:
        np.testing.assert_allclose(ar_trend.time_rescale([1, 2, 3]), [0.0, 0.5, 1.0])

    def test_single_stamp_maps_to_zero(self) -> None:
        np.testing.assert_array_equal(ar_trend.time_rescale([1875.0]), [0.0])

    def test_constant_stamps_rejected(self) -> None:
        with self.assertRaises(model_api.DataFormatError):
            ar_trend.time_rescale([4.0, 4.0, 4.0])

    def test_extension_continues_spacing(self) -> None:
        extended = ar_trend.extended_time_scale([1, 2, 3], 5)
        np.testing.assert_allclose(extended, [0.0, 0.5, 1.0, 1.5, 2.0])


class ResidualRecursionTests(unittest.TestCase):

    def test_no_autoregression_keeps_residuals(self) -> None:
        params = ArTrendParams(b=np.array([1.0]), phi=np.zeros(0), sigma=1.0)
        eps, e = ar_trend.residual_recursion(params, [3.0, 0.5, -2.0], [0.0, 0.5, 1.0])
        np.testing.assert_allclose(eps, [2.0, -0.5, -3.0])
        np.testing.assert_allclose(e, eps)

    def test_one_step_by_hand(self) -> None:
        params = ArTrendParams(b=np.array([0.0]), phi=np.array([0.5]), sigma=1.0)
        eps, e = ar_trend.residual_recursion(params, [2.0, 3.0], [0.0, 1.0])
        self.assertEqual(e[0], 2.0)
        self.assertAlmostEqual(e[1], 2.0, places=12)


class LikelihoodTests(unittest.TestCase):

    def test_standard_normal_at_zero(self) -> None:
        spec = ArTrendSpec(p=1, trend_degree=0)
        data = TimeSeries(y=[0.0, 0.0])
        value = spec.conditional_log_lik(np.array([0.0, 0.0, 1.0]), data, 2)
        self.assertAlmostEqual(value, -0.9189385332, places=9)

    def test_reduces_to_regression_without_ar(self) -> None:
        spec = ArTrendSpec(p=2, trend_degree=2)
        data = _trend_series(12, 3)
        theta = np.array([0.5, 1.5, -0.3, 0.0, 0.0, 0.8])
        trend = 0.5 + 1.5 * ar_trend.time_rescale(data.t) - 0.3 * ar_trend.time_rescale(data.t) ** 2
        for j in (1, 5, 12):
            with self.subTest(j=j):
                self.assertAlmostEqual(spec.conditional_log_lik(theta, data, j),
                                       stats.norm.logpdf(data.y[j - 1] - trend[j - 1], scale=0.8),
                                       places=10)

    def test_factorization_matches_joint_gaussian(self) -> None:
        """Conditionals sum to the joint density of an AR process started at zero."""
        spec = ArTrendSpec(p=2, trend_degree=1)
        data = _trend_series(10, 7)
        theta = np.array([0.7, 1.2, 0.5, 0.3, 1.3])
        params = spec.unpack(theta)

        n = data.n
        shift = np.eye(n) - sum(params.phi[k - 1] * np.eye(n, k=-k) for k in (1, 2))
        transform = np.linalg.inv(shift)
        cov = params.sigma ** 2 * transform @ transform.T
        trend = ar_trend._design_matrix(spec, ar_trend.time_rescale(data.t)) @ params.b
        joint = stats.multivariate_normal.logpdf(data.y, mean=trend, cov=cov)

        conditionals = sum(spec.conditional_log_lik(theta, data, j) for j in range(1, n + 1))
        self.assertAlmostEqual(conditionals, joint, delta=1e-10 * max(1.0, abs(joint)))
        self.assertAlmostEqual(spec.log_likelihood(theta, data), joint,
                               delta=1e-10 * max(1.0, abs(joint)))

    def test_vectorized_matches_scalar(self) -> None:
        spec = ArTrendSpec(p=3, trend_degree=2)
        data = _trend_series(15, 2)
        draws = np.column_stack([np.random.default_rng(0).normal(size=(6, 6)),
                                 np.full(6, 0.9)])
        matrix = spec.pointwise_log_lik(draws, data, 4, 15)
        for s in (0, 5):
            for j in (4, 9, 15):
                self.assertAlmostEqual(matrix[s, j - 4],
                                       spec.conditional_log_lik(draws[s], data, j), places=10)


class LogPriorTests(unittest.TestCase):

    def test_prior_means_with_fixed_sigma(self) -> None:
        spec = ArTrendSpec(p=2, trend_degree=1, fixed_sigma=1.0,
                           priors=ArTrendPriors(b_sd=1.0, phi_sd=1.0, sigma_sd=1.0))
        params = ArTrendParams(b=np.zeros(2), phi=np.zeros(2), sigma=1.0)
        self.assertAlmostEqual(ar_trend.log_prior(params, spec), -2.0 * math.log(2 * math.pi))

    def test_half_normal_sigma_term(self) -> None:
        spec = ArTrendSpec(p=0, trend_degree=0,
                           priors=ArTrendPriors(b_sd=1.0, phi_sd=1.0, sigma_sd=1.0))
        params = ArTrendParams(b=np.zeros(1), phi=np.zeros(0), sigma=1.0)
        expected = -0.5 * math.log(2 * math.pi) + math.log(2) - 0.5 * math.log(2 * math.pi) - 0.5
        self.assertAlmostEqual(ar_trend.log_prior(params, spec), expected)

    def test_doubling_prior_sd_lowers_density_by_log_two(self) -> None:
        params = ArTrendParams(b=np.zeros(1), phi=np.zeros(0), sigma=1.0)
        narrow = ArTrendSpec(p=0, trend_degree=0, fixed_sigma=1.0,
                             priors=ArTrendPriors(b_sd=1.0))
        wide = ArTrendSpec(p=0, trend_degree=0, fixed_sigma=1.0,
                           priors=ArTrendPriors(b_sd=2.0))
        drop = ar_trend.log_prior(params, narrow) - ar_trend.log_prior(params, wide)
        self.assertAlmostEqual(drop, math.log(2))

    def test_negative_sigma_is_rejected_region(self) -> None:
        params = ArTrendParams(b=np.zeros(3), phi=np.zeros(0), sigma=-1.0)
        self.assertEqual(ar_trend.log_prior(params, ArTrendSpec()), -math.inf)


class PredictiveTests(unittest.TestCase):

    def test_tiny_noise_returns_conditional_mean(self) -> None:
        spec = ArTrendSpec(p=1, trend_degree=1)
        data = TimeSeries(y=[1.0, 3.0, 2.0, 4.0, 0.0])
        theta = np.array([0.5, 2.0, 0.6, 1e-8])
        t_scaled = ar_trend.time_rescale(data.t)
        eps_3 = 2.0 - (0.5 + 2.0 * t_scaled[2])
        expected = 0.5 + 2.0 * t_scaled[3] + 0.6 * eps_3

        value = model_api.predictive_sample(spec, theta, data, 3, 1, np.random.default_rng(1))
        self.assertAlmostEqual(float(value[0]), expected, delta=1e-6)

    def test_multi_step_feeds_residuals_forward(self) -> None:
        spec = ArTrendSpec(p=1, trend_degree=0)
        data = TimeSeries(y=[0.0, 0.0, 0.0, 8.0, 0.0, 0.0, 0.0, 0.0])
        theta = np.array([0.0, 0.5, 1e-8])
        path = model_api.predictive_sample(spec, theta, data, 4, 4, np.random.default_rng(2))
        np.testing.assert_allclose(path, [4.0, 2.0, 1.0, 0.5], atol=1e-6)

    def test_free_forecast_past_end(self) -> None:
        spec = ArTrendSpec(p=0, trend_degree=1)
        data = TimeSeries(y=[0.0, 1.0, 2.0])
        theta = np.array([0.0, 2.0, 1e-8])
        path = model_api.predictive_sample(spec, theta, data, 3, 2, np.random.default_rng(0),
                                           free_forecast=True)
        np.testing.assert_allclose(path, [3.0, 4.0], atol=1e-6)

    def test_single_path_matches_batch_stream(self) -> None:
        spec = ArTrendSpec(p=1, trend_degree=1)
        data = _trend_series(20, 5)
        theta = np.array([0.5, 1.0, 0.4, 0.9])
        one = spec.predictive_sample(theta, data, 10, 3, np.random.default_rng(9))
        batch = spec.predictive_paths(theta[None, :], data, 10, 3, np.random.default_rng(9))
        np.testing.assert_array_equal(one, batch[0])


class MetropolisTests(unittest.TestCase):

    def test_fixed_seed_is_deterministic(self) -> None:
        spec = ArTrendSpec(p=1, trend_degree=1)
        data = _trend_series(30, 1)
        a = model_api.fit_prefix(spec, data, 30, SMALL_SAMPLER, (11, 30, 0))
        b = model_api.fit_prefix(spec, data, 30, SMALL_SAMPLER, (11, 30, 0))
        np.testing.assert_array_equal(a.draws, b.draws)
        self.assertEqual(a.draws.shape, (1000, spec.n_params))

    def test_prefix_is_recorded(self) -> None:
        spec = ArTrendSpec(p=2, trend_degree=2)
        data = _trend_series(40, 4)
        posterior = model_api.fit_prefix(spec, data, 25, SMALL_SAMPLER, 3)
        self.assertEqual(posterior.fitted_prefix_len, 25)
        self.assertTrue(np.all(posterior.draws[:, -1] > 0))

    def test_empty_prefix_gives_prior_draws(self) -> None:
        spec = ArTrendSpec(p=1, trend_degree=0)
        posterior = model_api.fit_prefix(spec, _trend_series(10, 0), 0, SMALL_SAMPLER, 5)
        self.assertEqual(posterior.diagnostics.method, "prior")
        self.assertAlmostEqual(posterior.draws[:, 0].std(), 10.0, delta=1.0)

    def test_short_prefix_refused(self) -> None:
        spec = ArTrendSpec(p=2, trend_degree=2)
        with self.assertRaises(model_api.InsufficientHistoryError):
            model_api.fit_prefix(spec, _trend_series(20, 0), 5, SMALL_SAMPLER, 5)

    def test_acceptance_outside_window_fails_with_diagnostics(self) -> None:
        config = SamplerConfig(chains=2, warmup=200, draws=100,
                               acceptance_low=0.95, acceptance_high=1.0)
        with self.assertRaises(model_api.FitFailureError) as ctx:
            model_api.fit_prefix(ArTrendSpec(p=0, trend_degree=1), _trend_series(30, 2),
                                 30, config, 1)
        self.assertLess(ctx.exception.diagnostics.acceptance_rate, 0.95)

    def test_matches_conjugate_posterior(self) -> None:
        spec = ArTrendSpec(p=0, trend_degree=1, fixed_sigma=1.0)
        data = _trend_series(30, 8)
        config = SamplerConfig(chains=4, warmup=1000, draws=1000)
        posterior = model_api.fit_prefix(spec, data, 30, config, 21)
        mean, cov = ar_trend.conjugate_posterior(data, spec)
        sd = np.sqrt(np.diag(cov))
        for k in range(2):
            with self.subTest(coefficient=k):
                draws = posterior.draws[:, k]
                self.assertLess(abs(draws.mean() - mean[k]), 0.3 * sd[k])
                self.assertAlmostEqual(draws.std(), sd[k], delta=0.2 * sd[k])


@unittest.skipUnless(os.environ.get("LFOCV_SLOW_TESTS"), "set LFOCV_SLOW_TESTS=1")
class CalibrationTests(unittest.TestCase):
    """Credible intervals cover the generating values of simulated series."""

    def test_ninety_percent_intervals(self) -> None:
        gen = simlab.GenSpec.for_kind("ar2-quadratic", N=200)
        truth = np.array(gen.b + gen.phi + (gen.sigma_innov,))
        spec = simlab.model_for_kind("ar2-quadratic")
        good = 0
        for rep in range(50):
            data = simlab.generate_series(gen, (31, rep))
            draws = model_api.fit_prefix(spec, data, data.n, simlab.DESK_SAMPLER, (32, rep)).draws
            low, high = np.quantile(draws, [0.05, 0.95], axis=0)
            covered = int(np.sum((low <= truth) & (truth <= high)))
            good += covered >= 4
        self.assertGreaterEqual(good, 40)


class ConjugateOracleTests(unittest.TestCase):

    def test_single_point_prior_predictive(self) -> None:
        spec = ArTrendSpec(p=0, trend_degree=0, fixed_sigma=1.0,
                           priors=ArTrendPriors(b_sd=1.0))
        value = ar_trend.conjugate_log_marginal(TimeSeries(y=[0.0]), spec)
        self.assertAlmostEqual(value, -0.5 * math.log(4 * math.pi), places=12)

    def test_sequential_terms_sum_to_marginal(self) -> None:
        spec = ArTrendSpec(p=0, trend_degree=2, fixed_sigma=1.0)
        data = _trend_series(40, 6, b=(0.0, 17.0, 25.0))
        terms = ar_trend.conjugate_log_predictive_terms(data, spec)
        self.assertAlmostEqual(terms.sum(), ar_trend.conjugate_log_marginal(data, spec),
                               delta=1e-8)

    def test_marginal_is_exchangeable(self) -> None:
        spec = ArTrendSpec(p=0, trend_degree=1, fixed_sigma=0.5)
        data = _trend_series(12, 9)
        design = ar_trend._design_matrix(spec, ar_trend.time_rescale(data.t))
        order = np.random.default_rng(4).permutation(data.n)
        permuted = ar_trend._gaussian_linear_log_marginal(data.y[order], design[order],
                                                          spec.priors.b_sd, 0.5)
        self.assertAlmostEqual(permuted, ar_trend.conjugate_log_marginal(data, spec), places=9)

    def test_ar_terms_unsupported(self) -> None:
        with self.assertRaises(model_api.UnsupportedConfigurationError):
            ar_trend.conjugate_log_marginal(_trend_series(5, 0), ArTrendSpec(p=1, fixed_sigma=1.0))
        with self.assertRaises(model_api.UnsupportedConfigurationError):
            ar_trend.conjugate_log_marginal(_trend_series(5, 0), ArTrendSpec(p=0))


class ModelFileTests(unittest.TestCase):

    def setUp(self) -> None:
        self.dir = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.dir, ignore_errors=True)

    def test_bundled_lake_huron_model(self) -> None:
        spec, sampler = ar_trend.load_model_file(os.path.join(REPO_DIR, "data",
                                                              "lake_huron_ar4.json"))
        self.assertEqual((spec.p, spec.trend_degree), (4, 1))
        self.assertEqual(spec.priors.b_sd, 1000.0)
        self.assertEqual(sampler.total_draws, 4000)

    def test_dict_form_is_stable(self) -> None:
        spec = ArTrendSpec(p=2, trend_degree=1, fixed_sigma=0.5)
        self.assertEqual(ArTrendSpec.from_dict(spec.describe()), spec)

    def test_unknown_key_rejected(self) -> None:
        path = os.path.join(self.dir, "model.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump({"p": 1, "ma": 2}, handle)
        with self.assertRaises(ValueError):
            ar_trend.load_model_file(path)

    def test_invalid_json_rejected(self) -> None:
        path = os.path.join(self.dir, "model.json")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("{p: 1")
        with self.assertRaises(ValueError):
            ar_trend.load_model_file(path)


if __name__ == "__main__":
    unittest.main()
