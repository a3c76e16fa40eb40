import math

import numpy as np
from django.test import SimpleTestCase

from apps.bounds.envelopes import BoundSet
from apps.common.boxes import StateBox
from apps.common.exceptions import DomainError, OutsideFunnel, SingularInputMap
from apps.controller.law import (
    ControlLaw, control, evaluate, invert_input_map, lyapunov_value, robustness_term,
)
from apps.funnel.synthesis import FunnelSpec, synthesize
from apps.gp.data import Dataset
from apps.gp.kernels import KernelParams
from apps.gp.regression import fit_posterior


def case_study_law(scale=(2.0, 3.0), targets=None, **kwargs):
    rng = np.random.default_rng(0)
    inputs = rng.uniform(-5, 5, size=(25, 2))
    if targets is None:
        targets = np.column_stack([np.sin(inputs[:, 0]), inputs[:, 1] * 0.1])
    model = fit_posterior(Dataset(inputs, targets, 0.05), KernelParams([1.0, 1.0], np.full((2, 2), 1.5)))
    spec = synthesize(StateBox.cube(-3, -2, 2), StateBox.cube(1, 3, 2), StateBox.cube(-5, 5, 2),
                      eps=[1.0, 1.0])
    return ControlLaw(model, BoundSet('deterministic', scale, 1.0), spec, **kwargs)


class ControlTests(SimpleTestCase):

    def test_at_eta_only_mean_and_envelope_remain(self):
        law = case_study_law()
        eta = law.spec.eta
        mean, std = law.model.predict(eta)
        np.testing.assert_allclose(control(law, eta, 0.0), -(mean + law.bound.scale * std), atol=1e-12)

    def test_zero_model_and_bound_leave_funnel_feedback(self):
        law = case_study_law(scale=(0.0, 0.0), targets=np.zeros((25, 2)))
        x, t = np.array([-2.5, -1.0]), 0.1
        error = evaluate(law, x, t).error
        expected = -(error.xi + law.spec.eps_bar * (x - law.spec.eta))
        np.testing.assert_allclose(control(law, x, t), expected, atol=1e-12)

    def test_scalar_hand_computation(self):
        # one sample at the query point: mu = 1, sigma = sqrt(1/2)
        model = fit_posterior(Dataset([[0.5]], [[2.0]], 1.0), KernelParams([1.0], [[1.0]]))
        spec = FunnelSpec([0.0], [0.9], [0.1], [0.4], [1.0], [1.0])
        law = ControlLaw(model, BoundSet('deterministic', [math.sqrt(0.5)], 1.0), spec,
                         g_map=lambda x: np.array([[2.0]]))
        u = control(law, [0.5], 0.0)
        self.assertAlmostEqual(u[0], -0.5 * (1 + 0.5 + math.log(3) + 0.2), places=10)
        self.assertAlmostEqual(u[0], -1.3993, places=4)

    def test_law_cancels_through_input_map(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(n, 5))
            g = rng.normal(size=(n, m))
            v = rng.normal(size=n)
            np.testing.assert_allclose(g @ invert_input_map(g, v), -v, atol=1e-9)

    def test_identity_map_negates_v(self):
        law = case_study_law()
        result = evaluate(law, [-2.7, -2.1], 0.0)
        np.testing.assert_allclose(result.u, -result.v, atol=1e-14)

    def test_singular_input_map(self):
        with self.assertRaises(SingularInputMap) as ctx:
            invert_input_map(np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones(2))
        self.assertEqual(ctx.exception.exit_code, 2)
        with self.assertRaises(DomainError):
            invert_input_map(np.eye(3), np.ones(2))

    def test_outside_funnel_propagates(self):
        law = case_study_law()
        with self.assertRaises(OutsideFunnel):
            control(law, [-4.0, 2.0], 0.0)

    def test_dimension_mismatch_rejected(self):
        law = case_study_law()
        with self.assertRaises(DomainError):
            ControlLaw(law.model, BoundSet('deterministic', [1.0], 1.0), law.spec)


class RobustnessTermTests(SimpleTestCase):

    def setUp(self):
        self.law = case_study_law()

    def test_positive_at_eta(self):
        _, std = self.law.model.predict(self.law.spec.eta)
        np.testing.assert_allclose(robustness_term(self.law, self.law.spec.eta), self.law.bound.scale * std)

    def test_sign_flip_is_componentwise(self):
        eta = self.law.spec.eta
        above = robustness_term(self.law, eta + [0.3, 0.4])
        mixed = robustness_term(self.law, eta + [-0.3, 0.4])
        self.assertGreater(above[0], 0)
        self.assertLess(mixed[0], 0)
        self.assertGreater(mixed[1], 0)

    def test_zero_scale_gives_zero(self):
        law = case_study_law(scale=(0.0, 0.0))
        np.testing.assert_array_equal(robustness_term(law, [0.0, 1.0]), [0.0, 0.0])

    def test_magnitude_is_envelope_width(self):
        rng = np.random.default_rng(5)
        for x in rng.uniform(-3, 2.5, size=(50, 2)):
            t = 0.0
            result = evaluate(self.law, x, t)
            remainder = result.v - result.mean - result.error.xi - self.law.spec.eps_bar * (x - self.law.spec.eta)
            np.testing.assert_allclose(np.abs(remainder), self.law.bound.scale * result.std, atol=1e-10)

    def test_jump_across_switching_surface(self):
        eta = self.law.spec.eta
        x = np.array([eta[0], -1.0])
        below = x.copy()
        below[0] = np.nextafter(eta[0], -np.inf)
        _, std = self.law.model.predict(x)
        jump = robustness_term(self.law, x)[0] - robustness_term(self.law, below)[0]
        self.assertAlmostEqual(jump, 2 * self.law.bound.scale[0] * std[0], places=10)

    def test_smoothing_removes_the_jump(self):
        law = case_study_law(smoothing=0.1)
        eta = law.spec.eta
        self.assertAlmostEqual(robustness_term(law, eta)[0], 0.0)
        with self.assertRaises(DomainError):
            case_study_law(smoothing=-1.0)


class LyapunovTests(SimpleTestCase):

    def setUp(self):
        self.law = case_study_law()

    def test_zero_at_eta(self):
        value, decrement = lyapunov_value(self.law, self.law.spec.eta, 4.0)
        self.assertEqual(value, 0.0)
        self.assertEqual(decrement, 0.0)

    def test_positive_off_eta(self):
        rng = np.random.default_rng(8)
        for x in rng.uniform(-3.4, 3.0, size=(100, 2)):
            if np.allclose(x, self.law.spec.eta):
                continue
            value, decrement = lyapunov_value(self.law, x, 0.0)
            self.assertGreater(value, 0.0)
            self.assertLess(decrement, 0.0)

    def test_outside_funnel(self):
        with self.assertRaises(OutsideFunnel):
            lyapunov_value(self.law, [2.0, 3.2], 0.0)
