import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, RBF

from apps.common.boxes import StateBox
from apps.common.exceptions import ConfigError, DomainError, FactorizationFailure
from apps.gp.data import Dataset, read_dataset_csv, write_dataset_csv
from apps.gp.hyperparams import log_marginal_likelihood, optimize_hyperparams
from apps.gp.kernels import KernelParams, kernel_eval, kernel_grad_sup, kernel_matrix
from apps.gp.regression import (
    fit_posterior, max_std, posterior_mean, posterior_std, posterior_variance,
)


def random_problem(rng, n=None, N=None):
    n = n or int(rng.integers(1, 4))
    N = N or int(rng.integers(1, 51))
    inputs = rng.uniform(-3, 3, size=(N, n))
    targets = np.sin(inputs).sum(axis=1, keepdims=True) * rng.uniform(0.5, 2, size=n)
    data = Dataset(inputs, targets + 0.05 * rng.standard_normal((N, n)), rng.uniform(0.1, 0.5))
    params = KernelParams(rng.uniform(0.5, 2.0, size=n), rng.uniform(0.5, 2.0, size=(n, n)))
    return data, params


def dense_oracle(data, params, i, query):
    def gram(a, b):
        scaled = (a[:, None, :] - b[None, :, :]) / params.lengthscales[i]
        return params.signal_std[i] ** 2 * np.exp(-0.5 * np.sum(scaled ** 2, axis=-1))

    system = gram(data.inputs, data.inputs) + data.noise_std ** 2 * np.eye(data.N)
    cross = gram(query, data.inputs)
    mean = cross @ np.linalg.solve(system, data.targets[:, i])
    var = params.signal_std[i] ** 2 - np.einsum('ij,ji->i', cross, np.linalg.solve(system, cross.T))
    return mean, np.sqrt(np.maximum(var, 0.0))


class KernelTests(SimpleTestCase):

    def setUp(self):
        self.params = KernelParams([1.0], [[1.0]])

    def test_zero_distance_gives_signal_variance(self):
        params = KernelParams([2.5, 0.3], [[1.0, 2.0], [0.5, 4.0]])
        x = np.array([0.3, -1.2])
        self.assertAlmostEqual(kernel_eval(params, 0, x, x), 6.25)
        self.assertAlmostEqual(kernel_eval(params, 1, x, x), 0.09)

    def test_unit_distance_value(self):
        self.assertAlmostEqual(kernel_eval(self.params, 0, [0.0], [1.0]), np.exp(-0.5), places=12)

    def test_symmetric_and_decaying(self):
        params = KernelParams([1.3], [[0.7, 2.0]])
        a, b = np.array([0.1, 0.4]), np.array([-1.0, 2.0])
        self.assertEqual(kernel_eval(params, 0, a, b), kernel_eval(params, 0, b, a))
        values = [kernel_eval(params, 0, [0.0, 0.0], [r, 0.0]) for r in np.linspace(0, 20, 50)]
        self.assertTrue(np.all(np.diff(values) < 0))
        self.assertLess(values[-1], 1e-12)

    def test_matrix_matches_pointwise(self):
        rng = np.random.default_rng(3)
        params = KernelParams([1.5, 0.8], rng.uniform(0.5, 2, size=(2, 2)))
        a, b = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
        matrix = kernel_matrix(params, 1, a, b)
        for p in range(4):
            for q in range(3):
                self.assertAlmostEqual(matrix[p, q], kernel_eval(params, 1, a[p], b[q]), places=14)

    def test_gradient_sup_closed_form(self):
        self.assertAlmostEqual(kernel_grad_sup(self.params, 0), np.exp(-0.5), places=12)
        params = KernelParams([2.0], [[4.0, 0.5]])
        self.assertAlmostEqual(kernel_grad_sup(params, 0), 4.0 * np.exp(-0.5) / 0.5)

    def test_rejects_nonpositive_parameters(self):
        with self.assertRaises(DomainError):
            KernelParams([1.0], [[0.0]])
        with self.assertRaises(DomainError):
            KernelParams([-1.0], [[1.0]])
        with self.assertRaises(DomainError):
            KernelParams([1.0, 1.0], [[1.0, 1.0]] * 3)


class DatasetTests(SimpleTestCase):

    def test_shape_mismatch_rejected(self):
        with self.assertRaises(DomainError):
            Dataset(np.zeros((3, 2)), np.zeros((2, 2)), 0.1)
        with self.assertRaises(DomainError):
            Dataset(np.zeros((3, 2)), np.zeros((3, 1)), 0.1)

    def test_non_finite_and_negative_noise_rejected(self):
        with self.assertRaises(DomainError):
            Dataset([[np.nan]], [[0.0]], 0.1)
        with self.assertRaises(DomainError):
            Dataset([[0.0]], [[0.0]], -0.1)

    def test_inputs_are_frozen_copies(self):
        inputs = np.zeros((2, 1))
        data = Dataset(inputs, np.ones((2, 1)), 0.0)
        inputs[0, 0] = 5.0
        self.assertEqual(data.inputs[0, 0], 0.0)
        with self.assertRaises(ValueError):
            data.inputs[0, 0] = 1.0

    def test_csv_file_preserves_values(self):
        data = Dataset([[0.125, -1.5], [2.0, 3.25]], [[1.0, 2.0], [3.0, 4.0]], 0.01)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_dataset_csv(data, Path(tmp) / 'data.csv')
            self.assertEqual(path.read_text().splitlines()[0], 'x_1,x_2,y_1,y_2')
            loaded = read_dataset_csv(path, 0.01)
        np.testing.assert_array_equal(loaded.inputs, data.inputs)
        np.testing.assert_array_equal(loaded.targets, data.targets)

    def test_missing_csv_names_path(self):
        with self.assertRaisesMessage(ConfigError, 'nope.csv'):
            read_dataset_csv('/nonexistent/nope.csv', 0.01)

    def test_unreadable_csv_is_a_config_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            empty = Path(tmp) / 'empty.csv'
            empty.write_bytes(b'')
            with self.assertRaisesMessage(ConfigError, 'empty.csv'):
                read_dataset_csv(empty, 0.01)
            garbled = Path(tmp) / 'garbled.csv'
            garbled.write_bytes(b'x_1,y_1\n\xff\xfe,1\n')
            with self.assertRaises(ConfigError):
                read_dataset_csv(garbled, 0.01)

    def test_bad_header_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'bad.csv'
            path.write_text('x_1,z\n0,1\n', encoding='utf-8')
            with self.assertRaises(ConfigError):
                read_dataset_csv(path, 0.01)


class PosteriorTests(SimpleTestCase):

    def test_single_point_mean_by_hand(self):
        data = Dataset([[0.5]], [[2.0]], 0.3)
        params = KernelParams([1.5], [[1.0]])
        model = fit_posterior(data, params)
        expected = 1.5 ** 2 * 2.0 / (1.5 ** 2 + 0.3 ** 2)
        self.assertAlmostEqual(posterior_mean(model, [0.5])[0], expected, places=12)

    def test_duplicate_inputs_without_noise_fail(self):
        data = Dataset([[1.0, 1.0], [1.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]], 0.0)
        with self.assertRaises(FactorizationFailure):
            fit_posterior(data, KernelParams([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]]))

    def test_prior_recovered_far_from_data(self):
        rng = np.random.default_rng(0)
        data, params = random_problem(rng, n=2, N=20)
        far = np.array([1e3, -1e3])
        self.assertLess(np.abs(posterior_mean(fit_posterior(data, params), far)).max(), 1e-8)
        np.testing.assert_allclose(posterior_std(fit_posterior(data, params), far),
                                   params.signal_std, atol=1e-8)

    def test_matches_dense_oracle_on_random_problems(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            data, params = random_problem(rng)
            model = fit_posterior(data, params)
            query = rng.uniform(-4, 4, size=(5, data.n))
            mean, std = model.predict(query)
            for i in range(data.n):
                oracle_mean, oracle_std = dense_oracle(data, params, i, query)
                np.testing.assert_allclose(mean[:, i], oracle_mean, atol=1e-8, rtol=0)
                np.testing.assert_allclose(std[:, i], oracle_std, atol=1e-8, rtol=0)

    def test_matches_scikit_learn_regressor(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            data, params = random_problem(rng, n=2, N=30)
            model = fit_posterior(data, params)
            query = rng.uniform(-4, 4, size=(10, 2))
            for i in range(2):
                kernel = (ConstantKernel(params.signal_std[i] ** 2, 'fixed')
                          * RBF(params.lengthscales[i], 'fixed'))
                reference = GaussianProcessRegressor(kernel, alpha=data.noise_std ** 2, optimizer=None)
                reference.fit(data.inputs, data.targets[:, i])
                ref_mean, ref_std = reference.predict(query, return_std=True)
                np.testing.assert_allclose(posterior_mean(model, query)[:, i], ref_mean, atol=1e-8)
                np.testing.assert_allclose(posterior_std(model, query)[:, i], ref_std, atol=1e-8)

    def test_interpolates_with_vanishing_noise(self):
        inputs = np.arange(6, dtype=float).reshape(-1, 1)
        targets = np.cos(inputs)
        model = fit_posterior(Dataset(inputs, targets, 1e-6), KernelParams([1.0], [[1.0]]))
        np.testing.assert_allclose(posterior_mean(model, inputs), targets, atol=1e-6)
        self.assertLess(posterior_std(model, inputs).max(), 1e-5)

    def test_variance_round_off_is_small(self):
        rng = np.random.default_rng(5)
        data, params = random_problem(rng, n=2, N=40)
        model = fit_posterior(Dataset(data.inputs, data.targets, 1e-3), params)
        raw = posterior_variance(model, data.inputs, clamp=False)
        self.assertGreaterEqual(raw.min(), -1e-8)
        self.assertGreaterEqual(posterior_std(model, data.inputs).min(), 0.0)

    def test_std_bounded_by_signal_std(self):
        rng = np.random.default_rng(8)
        data, params = random_problem(rng, n=2, N=15)
        std = posterior_std(fit_posterior(data, params), rng.uniform(-6, 6, size=(500, 2)))
        self.assertTrue(np.all(std <= params.signal_std + 1e-12))

    def test_identical_inputs_give_identical_queries(self):
        rng = np.random.default_rng(9)
        data, params = random_problem(rng, n=2, N=25)
        query = rng.normal(size=(7, 2))
        first = fit_posterior(data, params).predict(query)
        second = fit_posterior(data, params).predict(query)
        np.testing.assert_array_equal(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])

    def test_dimension_mismatch_rejected(self):
        data = Dataset([[0.0, 0.0]], [[0.0, 0.0]], 0.1)
        with self.assertRaises(DomainError):
            fit_posterior(data, KernelParams([1.0], [[1.0]]))


class MaxStdTests(SimpleTestCase):

    def setUp(self):
        self.box = StateBox.cube(-5, 5, 2)

    def test_far_corner_point_leaves_prior_std(self):
        data = Dataset([[5.0, 5.0]], [[0.0, 0.0]], 0.01)
        params = KernelParams([2.0, 0.5], [[0.5, 0.5], [0.5, 0.5]])
        np.testing.assert_allclose(max_std(fit_posterior(data, params), self.box, 41), [2.0, 0.5], atol=1e-8)

    def test_refined_nested_grid_never_decreases(self):
        rng = np.random.default_rng(4)
        data = Dataset(rng.uniform(-5, 5, size=(30, 2)), rng.normal(size=(30, 2)), 0.05)
        model = fit_posterior(data, KernelParams([1.0, 1.0], np.full((2, 2), 1.5)), self.box)
        coarse = max_std(model, grid_per_dim=2)
        fine = max_std(model, grid_per_dim=64)
        self.assertTrue(np.all(coarse <= fine))

    def test_requires_box_and_grid(self):
        model = fit_posterior(Dataset([[0.0]], [[0.0]], 0.1), KernelParams([1.0], [[1.0]]))
        with self.assertRaises(DomainError):
            max_std(model)
        with self.assertRaises(DomainError):
            max_std(model, StateBox.cube(0, 1, 1), grid_per_dim=1)


class LikelihoodTests(SimpleTestCase):

    def test_single_zero_target_by_hand(self):
        data = Dataset([[0.0]], [[0.0]], 0.2)
        value, _ = log_marginal_likelihood(data, KernelParams([1.5], [[1.0]]), 0)
        expected = -0.5 * np.log(1.5 ** 2 + 0.2 ** 2) - 0.5 * np.log(2 * np.pi)
        self.assertAlmostEqual(value, expected, places=12)

    def test_zero_targets_drop_quadratic_term(self):
        rng = np.random.default_rng(1)
        data, params = random_problem(rng, n=2, N=8)
        zero = Dataset(data.inputs, np.zeros_like(data.targets), data.noise_std)
        negated = Dataset(data.inputs, -data.targets, data.noise_std)
        value, _ = log_marginal_likelihood(zero, params, 0)
        model = fit_posterior(data, params)
        with_y, _ = log_marginal_likelihood(data, params, 0)
        self.assertAlmostEqual(with_y, value - 0.5 * model.quadratic_form(0), places=10)
        self.assertAlmostEqual(log_marginal_likelihood(negated, params, 0)[0], with_y, places=10)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(77)
        step = 1e-6
        for _ in range(50):
            data, params = random_problem(rng, N=int(rng.integers(2, 11)))
            i = int(rng.integers(0, data.n))
            _, grad = log_marginal_likelihood(data, params, i)
            theta = params.log_theta(i)
            numeric = np.empty_like(theta)
            for k in range(theta.size):
                bump = np.zeros_like(theta)
                bump[k] = step
                upper, _ = log_marginal_likelihood(data, params.with_log_theta(i, theta + bump), i)
                lower, _ = log_marginal_likelihood(data, params.with_log_theta(i, theta - bump), i)
                numeric[k] = (upper - lower) / (2 * step)
            error = np.linalg.norm(grad - numeric) / max(np.linalg.norm(numeric), 1e-8)
            self.assertLess(error, 1e-5)


class OptimizeTests(SimpleTestCase):

    def test_recovers_lengthscale_of_synthetic_process(self):
        rng = np.random.default_rng(31)
        inputs = rng.uniform(-5, 5, size=(40, 1))
        truth = KernelParams([2.0], [[1.0]])
        gram = kernel_matrix(truth, 0, inputs, inputs) + 1e-10 * np.eye(40)
        sample = np.linalg.cholesky(gram) @ rng.standard_normal(40)
        data = Dataset(inputs, (sample + 0.1 * rng.standard_normal(40)).reshape(-1, 1), 0.1)
        fit = optimize_hyperparams(data, KernelParams([1.0], [[3.0]]), budget=200, restarts=8, seed=0)
        self.assertTrue(fit.improved)
        self.assertTrue(0.5 <= fit.params.lengthscales[0, 0] <= 2.0)
        self.assertGreaterEqual(fit.log_evidence[0], fit.initial_log_evidence[0])

    def test_restarting_from_optimum_stays_put(self):
        rng = np.random.default_rng(12)
        inputs = np.linspace(-3, 3, 15).reshape(-1, 1)
        data = Dataset(inputs, np.sin(inputs) + 0.05 * rng.standard_normal((15, 1)), 0.05)
        first = optimize_hyperparams(data, KernelParams([1.0], [[1.0]]), restarts=4, seed=1)
        second = optimize_hyperparams(data, first.params, restarts=0, seed=1)
        np.testing.assert_allclose(second.params.lengthscales, first.params.lengthscales, rtol=1e-3)
        np.testing.assert_allclose(second.params.signal_std, first.params.signal_std, rtol=1e-3)
        self.assertGreaterEqual(second.log_evidence[0], first.log_evidence[0])

    def test_never_worse_than_init(self):
        rng = np.random.default_rng(6)
        data, params = random_problem(rng, n=2, N=20)
        fit = optimize_hyperparams(data, params, budget=30, restarts=2, seed=3)
        for i in range(2):
            value, _ = log_marginal_likelihood(data, fit.params, i)
            initial, _ = log_marginal_likelihood(data, params, i)
            self.assertGreaterEqual(value, initial)
        self.assertTrue(np.all(fit.params.lengthscales > 0))

    def test_rejects_empty_budget(self):
        data = Dataset([[0.0]], [[0.0]], 0.1)
        with self.assertRaises(DomainError):
            optimize_hyperparams(data, KernelParams([1.0], [[1.0]]), budget=0)
