import math

import numpy as np
from django.test import SimpleTestCase
from scipy.optimize import brentq
from scipy.stats import binom

from apps.bounds.coverage import (
    CoverageReport, calibrate_envelope, chunk_plan, chunk_seeds, clopper_pearson,
    count_hits, coverage_report, envelope_threshold, monte_carlo_coverage,
)
from apps.bounds.envelopes import (
    BoundSet, beta_deterministic, beta_probabilistic, confidence_to_epsilon, envelope,
    estimate_lipschitz_sqrt, rkhs_bound, rkhs_bounds,
)
from apps.bounds.information import information_gain, info_gain_greedy
from apps.common.boxes import StateBox
from apps.common.exceptions import DomainError, NegativeRadicand
from apps.gp.data import Dataset
from apps.gp.kernels import KernelParams
from apps.gp.regression import fit_posterior


def truth(points):
    points = np.atleast_2d(points)
    return np.column_stack([np.sin(points[:, 0]), np.cos(points[:, 1])])


def fitted_model(N=30, noise=0.05, seed=0):
    rng = np.random.default_rng(seed)
    box = StateBox.cube(-2, 2, 2)
    inputs = box.sample_uniform(rng, N)
    targets = truth(inputs) + noise * rng.standard_normal((N, 2))
    params = KernelParams([1.0, 1.0], np.ones((2, 2)))
    return fit_posterior(Dataset(inputs, targets, noise), params, box), box


def binomial_oracle(hits, trials, confidence_level):
    alpha = 1 - confidence_level
    if hits == 0:
        lower = 0.0
    else:
        lower = brentq(lambda p: binom.sf(hits - 1, trials, p) - alpha / 2, 0.0, 1.0,
                       xtol=1e-15, rtol=1e-15)
    if hits == trials:
        upper = 1.0
    else:
        upper = brentq(lambda p: binom.cdf(hits, trials, p) - alpha / 2, 0.0, 1.0,
                       xtol=1e-15, rtol=1e-15)
    return lower, upper


class BetaProbabilisticTests(SimpleTestCase):

    def test_zero_gain_leaves_norm_term(self):
        self.assertAlmostEqual(beta_probabilistic(3.0, 0.0, 10, 0.1), math.sqrt(2) * 3.0, places=12)

    def test_unit_logarithm_by_hand(self):
        # (N + 1) / epsilon = e
        beta = beta_probabilistic(1.0, 1.0, 1, 2 / math.e)
        self.assertAlmostEqual(beta, math.sqrt(302), places=10)
        self.assertAlmostEqual(beta, 17.378, places=3)

    def test_monotone_in_epsilon_gain_and_samples(self):
        values = [beta_probabilistic(1.0, 2.0, 9, eps) for eps in np.linspace(0.01, 0.99, 60)]
        self.assertTrue(np.all(np.diff(values) < 0))
        self.assertLessEqual(beta_probabilistic(1.0, 1.0, 9, 0.1), beta_probabilistic(1.0, 2.0, 9, 0.1))
        self.assertLessEqual(beta_probabilistic(1.0, 1.0, 9, 0.1), beta_probabilistic(1.0, 1.0, 90, 0.1))

    def test_matches_closed_form_on_random_tuples(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            norm, gamma = rng.uniform(0, 50), rng.uniform(0, 100)
            N, eps = int(rng.integers(1, 10_000)), rng.uniform(1e-6, 1 - 1e-6)
            log_term = math.log(N + 1) - math.log(eps)
            expected = math.sqrt(2 * norm * norm + 300 * gamma * log_term * log_term * log_term)
            self.assertLess(abs(beta_probabilistic(norm, gamma, N, eps) / expected - 1), 1e-12)

    def test_rejects_epsilon_outside_unit_interval(self):
        for eps in (0.0, 1.0, -0.5, 2.0):
            with self.assertRaises(DomainError):
                beta_probabilistic(1.0, 1.0, 5, eps)
        with self.assertRaises(DomainError):
            beta_probabilistic(1.0, 1.0, 0, 0.5)

    def test_epsilon_from_joint_confidence(self):
        eps = confidence_to_epsilon(0.9894, 2)
        self.assertAlmostEqual((1 - eps) ** 2, 0.9894, places=12)


class RKHSBoundTests(SimpleTestCase):

    def test_unit_kernel_constant(self):
        params = KernelParams([1.0], [[1.0]])
        self.assertAlmostEqual(rkhs_bound(1.0, params, 0), 1 / math.sqrt(2 * math.exp(-0.5)), places=12)
        self.assertAlmostEqual(rkhs_bound(1.0, params, 0), 0.9079, places=4)

    def test_linear_in_lipschitz_and_monotone_in_lengthscale(self):
        params = KernelParams([2.0], [[0.5, 1.5]])
        self.assertAlmostEqual(rkhs_bound(4.0, params, 0), 2 * rkhs_bound(2.0, params, 0), places=12)
        longer = KernelParams([2.0], [[1.0, 3.0]])
        self.assertGreaterEqual(rkhs_bound(2.0, longer, 0), rkhs_bound(2.0, params, 0))

    def test_rejects_nonpositive_constant(self):
        with self.assertRaises(DomainError):
            rkhs_bound(0.0, KernelParams([1.0], [[1.0]]), 0)

    def test_vector_form_collects_all_dimensions(self):
        params = KernelParams([1.0, 2.0], [[1.0, 1.0], [2.0, 0.5]])
        bound = rkhs_bounds([1.0, 3.0], params)
        self.assertEqual(bound.norm_bound.shape, (2,))
        self.assertAlmostEqual(bound.norm_bound[1], rkhs_bound(3.0, params, 1), places=12)
        self.assertTrue(np.all(bound.kernel_grad_sup > 0))


class LipschitzEstimateTests(SimpleTestCase):

    def test_single_pair(self):
        data = Dataset([[0.0, 0.0], [4.0, 1.0]], [[0.0, 0.0], [1.0, 0.0]], 0.0)
        self.assertAlmostEqual(estimate_lipschitz_sqrt(data, 0), 0.5)

    def test_constant_targets_give_zero(self):
        data = Dataset([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]], np.ones((3, 2)), 0.0)
        self.assertEqual(estimate_lipschitz_sqrt(data, 1), 0.0)

    def test_more_samples_never_decrease(self):
        rng = np.random.default_rng(0)
        inputs = rng.uniform(-1, 1, size=(20, 2))
        targets = truth(inputs)
        previous = 0.0
        for N in range(2, 21):
            value = estimate_lipschitz_sqrt(Dataset(inputs[:N], targets[:N], 0.0), 0)
            self.assertGreaterEqual(value, previous)
            previous = value

    def test_identical_inputs_rejected(self):
        data = Dataset([[1.0, 1.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0]], 0.1)
        with self.assertRaises(DomainError):
            estimate_lipschitz_sqrt(data, 0)
        with self.assertRaises(DomainError):
            estimate_lipschitz_sqrt(Dataset([[1.0]], [[0.0]], 0.1), 0)


class BetaDeterministicTests(SimpleTestCase):

    def test_zero_targets(self):
        data = Dataset([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]], np.zeros((3, 2)), 0.1)
        model = fit_posterior(data, KernelParams([1.0, 1.0], np.ones((2, 2))))
        self.assertAlmostEqual(beta_deterministic(2.0, data, model, 0), math.sqrt(4 + 3), places=12)

    def test_matches_dense_solve(self):
        model, _ = fitted_model()
        data = model.data
        params = model.params
        diff = (data.inputs[:, None, :] - data.inputs[None, :, :]) / params.lengthscales[1]
        gram = params.signal_std[1] ** 2 * np.exp(-0.5 * np.sum(diff ** 2, axis=-1))
        y = data.targets[:, 1]
        quad = y @ np.linalg.solve(gram + data.noise_std ** 2 * np.eye(data.N), y)
        expected = math.sqrt(2500.0 - quad + data.N)
        self.assertAlmostEqual(beta_deterministic(50.0, data, model, 1), expected, places=8)

    def test_small_norm_bound_is_rejected_with_hint(self):
        data = Dataset([[0.0]], [[100.0]], 0.01)
        model = fit_posterior(data, KernelParams([1.0], [[1.0]]))
        with self.assertRaises(NegativeRadicand) as ctx:
            beta_deterministic(0.5, data, model, 0)
        self.assertIn('B_1', str(ctx.exception))
        self.assertEqual(ctx.exception.exit_code, 2)


class EnvelopeTests(SimpleTestCase):

    def test_lower_side_subtracts_width(self):
        model, _ = fitted_model()
        bound = BoundSet('deterministic', [2.0, 3.0], 1.0)
        x = np.array([[0.3, -0.4], [1.0, 1.5]])
        lower, upper = envelope(model, bound, x)
        mean, std = model.predict(x)
        np.testing.assert_allclose(lower, mean - bound.scale * std)
        np.testing.assert_allclose(upper, mean + bound.scale * std)
        self.assertTrue(np.all(lower <= upper))

    def test_bound_set_invariants(self):
        with self.assertRaises(DomainError):
            BoundSet('deterministic', [1.0], 0.99)
        with self.assertRaises(DomainError):
            BoundSet('probabilistic', [-1.0], 0.9)
        with self.assertRaises(DomainError):
            BoundSet('heuristic', [1.0], 0.9)
        restored = BoundSet.from_dict(BoundSet('probabilistic', [1.0, 2.0], 0.98, 0.01).to_dict())
        np.testing.assert_array_equal(restored.scale, [1.0, 2.0])
        self.assertEqual(restored.epsilon, 0.01)


class InformationGainTests(SimpleTestCase):

    def setUp(self):
        self.box = StateBox.cube(-2, 2, 2)

    def test_single_pick_is_one_by_one_determinant(self):
        model, box = fitted_model(noise=0.2)
        gain = info_gain_greedy(model, box, 1, 0, candidates=100)
        self.assertAlmostEqual(gain.raw, 0.5 * math.log(1 + 1.0 / 0.04), places=12)
        self.assertAlmostEqual(gain.gamma, gain.raw / (1 - math.exp(-1)), places=12)

    def test_vanishing_signal_gives_no_information(self):
        data = Dataset([[0.0, 0.0]], [[0.0, 0.0]], 0.1)
        model = fit_posterior(data, KernelParams([1e-8, 1e-8], np.ones((2, 2))))
        self.assertLess(info_gain_greedy(model, self.box, 20, 0, candidates=50).gamma, 1e-12)

    def test_monotone_in_budget(self):
        model, box = fitted_model(noise=0.1)
        values = [info_gain_greedy(model, box, m, 1, candidates=64).raw for m in range(1, 15)]
        self.assertTrue(np.all(np.diff(values) >= 0))

    def test_zero_noise_rejected(self):
        model = fit_posterior(Dataset([[0.0, 0.0]], [[0.0, 0.0]], 0.0),
                              KernelParams([1.0, 1.0], np.ones((2, 2))))
        with self.assertRaises(DomainError):
            info_gain_greedy(model, self.box, 1, 0)

    def test_supplied_values_bypass_search(self):
        model, box = fitted_model()
        gain = information_gain(model, box, supplied=[1.5, 2.5])
        self.assertEqual(gain.method, 'user_supplied')
        np.testing.assert_array_equal(gain.gamma, [1.5, 2.5])
        greedy = information_gain(model, box, budget=3, candidates=25)
        self.assertEqual(greedy.method, 'greedy_overapprox')
        self.assertTrue(np.all(greedy.gamma > 0))


class ClopperPearsonTests(SimpleTestCase):

    def test_matches_binomial_bisection(self):
        for hits, trials in [(0, 1), (1, 1), (5, 10), (999_999, 1_000_000)]:
            for level in (0.95, 1 - 1e-10):
                interval = clopper_pearson(hits, trials, level)
                oracle = binomial_oracle(hits, trials, level)
                np.testing.assert_allclose(interval, oracle, atol=1e-9, rtol=0)

    def test_interval_brackets_rate(self):
        for hits, trials in [(0, 7), (3, 7), (7, 7), (500, 1000)]:
            lo, hi = clopper_pearson(hits, trials, 0.99)
            self.assertTrue(0.0 <= lo <= hits / trials <= hi <= 1.0)

    def test_rejects_invalid_counts(self):
        with self.assertRaises(DomainError):
            clopper_pearson(3, 2, 0.95)
        with self.assertRaises(DomainError):
            clopper_pearson(0, 0, 0.95)
        with self.assertRaises(DomainError):
            clopper_pearson(1, 2, 1.0)


class MonteCarloCoverageTests(SimpleTestCase):

    def setUp(self):
        self.model, self.box = fitted_model()

    def test_huge_envelope_always_hits(self):
        report = monte_carlo_coverage(self.model, truth, self.box, [1e12, 1e12], 2000, 0.95, seed=1)
        self.assertEqual(report.hits, report.trials)
        self.assertEqual(report.interval[1], 1.0)

    def test_zero_envelope_never_hits(self):
        report = monte_carlo_coverage(self.model, truth, self.box, [0.0, 0.0], 2000, 0.95, seed=1)
        self.assertEqual(report.hits, 0)
        self.assertEqual(report.interval[0], 0.0)
        self.assertLess(report.interval[1], 0.01)

    def test_enlarging_envelope_never_loses_hits(self):
        hits = [monte_carlo_coverage(self.model, truth, self.box, [s, s], 3000, 0.95, seed=4).hits
                for s in (0.5, 1.0, 2.0, 3.0, 5.0)]
        self.assertTrue(np.all(np.diff(hits) >= 0))
        constant = [monte_carlo_coverage(self.model, truth, self.box, [e, e], 3000, 0.95, seed=4,
                                         mode='constant').hits
                    for e in (0.01, 0.05, 0.1)]
        self.assertTrue(np.all(np.diff(constant) >= 0))

    def test_same_seed_same_report(self):
        first = monte_carlo_coverage(self.model, truth, self.box, [2.0, 2.0], 5000, 0.99, seed=9,
                                     chunk_size=1500)
        second = monte_carlo_coverage(self.model, truth, self.box, [2.0, 2.0], 5000, 0.99, seed=9,
                                      chunk_size=1500)
        self.assertEqual(first, second)
        self.assertTrue(0 <= first.interval[0] <= first.rate <= first.interval[1] <= 1)

    def test_chunks_can_be_counted_in_any_order(self):
        plan = chunk_plan(5000, 1500)
        self.assertEqual(plan, [1500, 1500, 1500, 500])
        seeds = chunk_seeds(9, len(plan))
        threshold = envelope_threshold(self.model, [2.0, 2.0], 'pointwise')
        counts = [count_hits(self.model, truth, self.box, threshold, 'pointwise', s, m)
                  for s, m in zip(seeds, plan)]
        reversed_total = sum(reversed(counts))
        in_process = monte_carlo_coverage(self.model, truth, self.box, [2.0, 2.0], 5000, 0.99,
                                          seed=9, chunk_size=1500)
        self.assertEqual(in_process.hits, reversed_total)
        assembled = coverage_report(threshold, reversed_total, 5000, 0.99, 9, 'pointwise')
        self.assertEqual(assembled, in_process)

    def test_constant_mode_scales_by_sigma_bar(self):
        threshold = envelope_threshold(self.model, [2.0, 4.0], 'constant', sigma_bar=[0.1, 0.01])
        np.testing.assert_allclose(threshold, [0.2, 0.04])
        with self.assertRaises(DomainError):
            envelope_threshold(self.model, [1.0, 1.0], 'banded')

    def test_report_row_and_bound_set(self):
        report = CoverageReport([0.04, 0.04], 990, 1000, clopper_pearson(990, 1000, 0.99), 0.99, 3)
        row = report.to_row()
        self.assertEqual(row['hits'], 990)
        self.assertEqual(row['threshold_2'], 0.04)
        bound = report.to_bound_set(sigma_bar=[0.02, 0.01])
        np.testing.assert_allclose(bound.scale, [2.0, 4.0])
        self.assertEqual(bound.kind, 'monte_carlo')
        self.assertAlmostEqual((1 - bound.epsilon) ** 2, report.interval[0], places=12)
        with self.assertRaises(DomainError):
            CoverageReport([0.1], 5, 4, (0.0, 1.0), 0.9, None)


class CalibrateEnvelopeTests(SimpleTestCase):

    def setUp(self):
        self.model, self.box = fitted_model()

    def test_full_coverage_returns_largest_error(self):
        rng = np.random.default_rng(2)
        points = self.box.sample_uniform(rng, 4000)
        errors = np.abs(truth(points) - self.model.predict(points)[0])
        np.testing.assert_allclose(calibrate_envelope(self.model, truth, self.box, 1.0, 4000, seed=2),
                                   errors.max(axis=0))

    def test_quantile_envelope_reaches_target_on_fresh_samples(self):
        calibrated = calibrate_envelope(self.model, truth, self.box, 0.99, 40_000, seed=5)
        self.assertTrue(np.all(calibrated <= calibrate_envelope(self.model, truth, self.box, 1.0,
                                                                40_000, seed=5)))
        report = monte_carlo_coverage(self.model, truth, self.box, calibrated, 40_000, 0.95,
                                      seed=6, mode='constant')
        self.assertGreater(report.rate, 0.98)

    def test_rejects_bad_target(self):
        with self.assertRaises(DomainError):
            calibrate_envelope(self.model, truth, self.box, 0.0, 100)
