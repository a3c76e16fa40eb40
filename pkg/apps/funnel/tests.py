import math

import numpy as np
from django.test import SimpleTestCase

from apps.common.boxes import StateBox
from apps.common.exceptions import DegenerateDim, DomainError, InfeasibleGoal, OutsideFunnel
from apps.funnel.synthesis import (
    FunnelSpec, funnel_interval, funnel_series, rho, settling_time, synthesize,
)
from apps.funnel.transform import inverse_transform, log_transform, state_from_xi, transform


def case_study_funnel(**kwargs):
    return synthesize(StateBox.cube(-3, -2, 2), StateBox.cube(1, 3, 2), StateBox.cube(-5, 5, 2),
                      eps=[1.0, 1.0], **kwargs)


def random_boxes(rng, n):
    state = StateBox.cube(-10, 10, n)
    corners = np.sort(rng.uniform(-10, 10, size=(2, 2, n)), axis=1)
    start = StateBox(corners[0, 0], corners[0, 1])
    goal = StateBox(corners[1, 0], corners[1, 1])
    return start, goal, state


class SynthesisTests(SimpleTestCase):

    def test_case_study_parameters(self):
        spec = case_study_funnel()
        np.testing.assert_allclose(spec.eta, [2.0, 2.0])
        np.testing.assert_allclose(spec.rho0, [5.0, 5.0])
        np.testing.assert_allclose(spec.c, [1.0, 1.0])
        np.testing.assert_allclose(spec.d, [0.2, 0.2])
        np.testing.assert_allclose(spec.rho_inf, [0.5, 0.5])
        self.assertEqual(spec.eps_bar, 1.0)

    def test_identical_start_and_goal_use_overlap(self):
        unit = StateBox.cube(0, 1, 3)
        spec = synthesize(unit, unit, StateBox.cube(-1, 2, 3), eps=1.0)
        np.testing.assert_allclose(spec.eta, 0.5)
        np.testing.assert_allclose(spec.rho0, 0.5)
        np.testing.assert_allclose(spec.c, 1.0)
        np.testing.assert_allclose(spec.d, 1.0)

    def test_goal_without_interior_is_infeasible(self):
        flat_goal = StateBox.from_bounds([1.0, 1.0], [3.0, 1.0])
        with self.assertRaises(InfeasibleGoal):
            synthesize(StateBox.cube(-3, -2, 2), flat_goal, StateBox.cube(-5, 5, 2), eps=1.0)

    def test_boxes_outside_state_space_are_infeasible(self):
        with self.assertRaises(InfeasibleGoal):
            synthesize(StateBox.cube(-3, -2, 2), StateBox.cube(4, 6, 2), StateBox.cube(-5, 5, 2), eps=1.0)

    def test_collapsed_dimension_is_degenerate(self):
        start = StateBox.from_bounds([0.5, 0.0], [0.5, 1.0])
        with self.assertRaises(DegenerateDim) as ctx:
            synthesize(start, StateBox.cube(0, 1, 2), StateBox.cube(-1, 2, 2), eps=1.0)
        self.assertEqual(ctx.exception.dim, 0)
        self.assertEqual(ctx.exception.exit_code, 3)

    def test_eta_override_outside_goal_rejected(self):
        with self.assertRaises(InfeasibleGoal):
            case_study_funnel(eta=[2.0, 3.0])

    def test_eta_on_start_boundary_is_nudged(self):
        start = StateBox.cube(0, 1, 1)
        goal = StateBox.cube(0.5, 2, 1)
        with self.assertLogs('apps.funnel.synthesis', level='WARNING'):
            spec = synthesize(start, goal, StateBox.cube(-1, 3, 1), eps=1.0, eta=[1.0])
        self.assertAlmostEqual(spec.eta[0], 0.999)
        self.assertGreaterEqual(min(spec.c[0], spec.d[0]), 1e-3)

    def test_overlap_only_on_goal_boundary_falls_back_to_hull(self):
        start = StateBox.cube(-1, 0, 1)
        goal = StateBox.cube(0, 1, 1)
        with self.assertLogs('apps.funnel.synthesis', level='WARNING'):
            spec = synthesize(start, goal, StateBox.cube(-2, 2, 1), eps=1.0)
        self.assertAlmostEqual(spec.eta[0], 0.5)
        self.assertAlmostEqual(spec.rho0[0], 1.5)
        self.assertAlmostEqual(spec.c[0], 1.0)
        self.assertAlmostEqual(spec.d[0], 1 / 3)

    def test_rejects_bad_rates(self):
        with self.assertRaises(DomainError):
            case_study_funnel(shrink=0.0)
        with self.assertRaises(DomainError):
            synthesize(StateBox.cube(-3, -2, 2), StateBox.cube(1, 3, 2), StateBox.cube(-5, 5, 2),
                       eps=[1.0, -1.0])

    def test_random_boxes_cover_start_and_settle_in_goal(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            n = int(rng.integers(1, 5))
            start, goal, state = random_boxes(rng, n)
            spec = synthesize(start, goal, state, eps=rng.uniform(0.2, 3.0, size=n),
                              shrink=rng.uniform(0.1, 1.0))
            lower, upper = spec.bounds(0.0)
            self.assertTrue(np.all(lower <= start.lower + 1e-12))
            self.assertTrue(np.all(upper >= start.upper - 1e-12))
            late = 100.0 / spec.eps.min()
            lower, upper = spec.bounds(late)
            self.assertTrue(np.all(lower >= goal.lower - 1e-12))
            self.assertTrue(np.all(upper <= goal.upper + 1e-12))
            self.assertTrue(np.all((spec.eta > goal.lower) & (spec.eta < goal.upper)))

    def test_settling_time_enters_goal(self):
        spec = case_study_funnel()
        goal = StateBox.cube(1, 3, 2)
        t_star = settling_time(spec, goal)
        self.assertTrue(0 < t_star < np.inf)
        self.assertTrue(StateBox(*spec.bounds(t_star + 1e-9)).is_subset_of(goal))
        self.assertFalse(StateBox(*spec.bounds(0.9 * t_star)).is_subset_of(goal))

    def test_serialization_keeps_values(self):
        spec = case_study_funnel()
        self.assertEqual(FunnelSpec.from_dict(spec.to_dict()), spec)


class FunnelSpecTests(SimpleTestCase):

    def setUp(self):
        self.spec = FunnelSpec([0.0], [5.0], [0.1], [1.0], [1.0], [1.0])

    def test_rho_by_hand(self):
        self.assertAlmostEqual(rho(self.spec, 0, 0.0), 5.1)
        self.assertAlmostEqual(rho(self.spec, 0, math.log(5)), 1.1, places=12)
        self.assertLess(abs(rho(self.spec, 0, 50.0) - 0.1), 1e-9)

    def test_rho_strictly_decreasing(self):
        values = [rho(self.spec, 0, t) for t in np.linspace(0, 20, 200)]
        self.assertTrue(np.all(np.diff(values) < 0))

    def test_intervals_are_nested(self):
        spec = case_study_funnel()
        times = np.linspace(0, 15, 300)
        for i in range(2):
            intervals = [funnel_interval(spec, i, t) for t in times]
            for (lo1, hi1), (lo2, hi2) in zip(intervals, intervals[1:]):
                self.assertTrue(lo1 <= lo2 < hi2 <= hi1)

    def test_initial_interval_covers_start_range(self):
        spec = case_study_funnel()
        lo, hi = funnel_interval(spec, 0, 0.0)
        self.assertAlmostEqual(lo, -3.5)
        self.assertAlmostEqual(hi, 3.1)

    def test_symmetric_sides_give_symmetric_interval(self):
        lo, hi = funnel_interval(self.spec, 0, 0.7)
        self.assertAlmostEqual(-lo, hi)

    def test_series_matches_pointwise_intervals(self):
        spec = case_study_funnel()
        times = [0.0, 0.5, 3.0]
        lower, upper = funnel_series(spec, times)
        self.assertEqual(lower.shape, (3, 2))
        for k, t in enumerate(times):
            lo, hi = funnel_interval(spec, 1, t)
            self.assertAlmostEqual(lower[k, 1], lo, places=12)
            self.assertAlmostEqual(upper[k, 1], hi, places=12)

    def test_invalid_parameters_rejected(self):
        with self.assertRaises(DomainError):
            FunnelSpec([0.0], [0.0], [0.1], [1.0], [1.0], [1.0])
        with self.assertRaises(DomainError):
            FunnelSpec([0.0], [1.0], [0.1], [1.0], [0.0], [0.0])
        with self.assertRaises(DomainError):
            FunnelSpec([0.0, 1.0], [1.0], [0.1], [1.0], [1.0], [1.0])


class TransformTests(SimpleTestCase):

    def setUp(self):
        self.unit = FunnelSpec([0.0], [0.9], [0.1], [1.0], [1.0], [1.0])
        self.case = case_study_funnel()

    def test_zero_at_eta(self):
        error = transform(self.case, self.case.eta, 2.0)
        np.testing.assert_array_equal(error.xi, [0.0, 0.0])
        self.assertTrue(np.all(error.phi > 0))

    def test_hand_value(self):
        # rho(0) = 1 so x_hat = x
        self.assertAlmostEqual(transform(self.unit, [0.5], 0.0).xi[0], math.log(3), places=12)

    def test_boundary_is_outside(self):
        with self.assertRaises(OutsideFunnel) as ctx:
            transform(self.unit, [1.0], 0.0)
        self.assertEqual(ctx.exception.boundary, 'upper')
        with self.assertRaises(OutsideFunnel) as ctx:
            transform(self.case, [2.0, -4.0], 0.0)
        self.assertEqual(ctx.exception.dim, 1)
        self.assertEqual(ctx.exception.boundary, 'lower')
        self.assertEqual(ctx.exception.exit_code, 4)

    def test_blows_up_near_boundary(self):
        near = [transform(self.unit, [1 - 10.0 ** -k], 0.0).xi[0] for k in range(2, 12)]
        self.assertTrue(np.all(np.diff(near) > 0))
        self.assertGreater(near[-1], 20)

    def test_strictly_increasing_on_grid(self):
        points = np.linspace(-3.49, 3.09, 500)
        values = [transform(self.case, [p, 2.0], 0.0).xi[0] for p in points]
        self.assertTrue(np.all(np.diff(values) > 0))

    def test_rates_and_gains(self):
        for t in np.linspace(0, 10, 40):
            error = transform(self.case, [1.8, 2.05], t)
            self.assertTrue(np.all(error.phi > 0))
            self.assertTrue(np.all(error.alpha > 0))
            self.assertTrue(np.all(error.alpha <= self.case.eps))
            np.testing.assert_allclose(
                error.phi,
                (self.case.c + self.case.d) / ((self.case.c + error.x_hat) * (self.case.d - error.x_hat))
                / self.case.rho(t))

    def random_funnel(self, rng, kind):
        """Free parameters, synthesized boxes, a nudged eta or a hull fallback, by kind."""
        n = int(rng.integers(1, 4))
        if kind == 0:
            return FunnelSpec(eta=rng.uniform(-10, 10, n), rho0=10 ** rng.uniform(-2, 1, n),
                              rho_inf=10 ** rng.uniform(-3, 0, n), eps=rng.uniform(0.1, 5, n),
                              c=10 ** rng.uniform(-3, 1, n), d=10 ** rng.uniform(-3, 1, n))
        width = 10 ** rng.uniform(-1, 1)
        offset = rng.uniform(-5, 5)
        eps = rng.uniform(0.2, 3.0)
        with self.assertLogs('apps.funnel.synthesis', level='INFO'):
            if kind == 1:
                start, goal, state = random_boxes(rng, n)
                return synthesize(start, goal, state, eps=rng.uniform(0.2, 3.0, size=n),
                                  shrink=rng.uniform(0.1, 1.0))
            if kind == 2:
                return synthesize(StateBox.cube(offset, offset + width, 1),
                                  StateBox.cube(offset + 0.5 * width, offset + 2 * width, 1),
                                  StateBox.cube(offset - width, offset + 3 * width, 1),
                                  eps=eps, eta=[offset + width])
            reach = rng.uniform(0.5, 3.0) * width
            return synthesize(StateBox.cube(offset - width, offset, 1),
                              StateBox.cube(offset, offset + reach, 1),
                              StateBox.cube(offset - 2 * width, offset + 4 * width, 1), eps=eps)

    def test_inverse_round_trip_over_random_funnels(self):
        rng = np.random.default_rng(2024)
        for k in range(10_000):
            spec = self.random_funnel(rng, k % 4)
            xi = rng.uniform(-8, 8, size=spec.n)
            x_hat = inverse_transform(spec, xi)
            self.assertTrue(np.all((x_hat > -spec.c) & (x_hat < spec.d)), str(spec))
            np.testing.assert_array_less(np.abs(log_transform(spec, x_hat) - xi),
                                         1e-10 * (1 + np.abs(xi)), err_msg=str(spec))
            t = rng.uniform(0, 5)
            lower, upper = spec.bounds(t)
            state = state_from_xi(spec, xi, t)
            self.assertTrue(np.all((state > lower) & (state < upper)), str(spec))

    def test_nudged_and_hull_funnels_are_asymmetric(self):
        rng = np.random.default_rng(5)
        nudged = self.random_funnel(rng, 2)
        hull = self.random_funnel(rng, 3)
        self.assertAlmostEqual(nudged.d[0], 1e-3 / 0.999, places=9)
        self.assertLess(hull.d[0], hull.c[0])

    def test_log_transform_rejects_closed_boundary(self):
        with self.assertRaises(OutsideFunnel) as ctx:
            log_transform(self.case, [0.0, -self.case.c[1]])
        self.assertEqual(ctx.exception.boundary, 'lower')
        with self.assertRaises(OutsideFunnel):
            log_transform(self.case, [self.case.d[0], 0.0])

    def test_inverse_limits(self):
        np.testing.assert_array_equal(inverse_transform(self.case, [0.0, 0.0]), [0.0, 0.0])
        climbing = [inverse_transform(self.case, [xi, -xi])
                    for xi in np.linspace(0, 40, 100)]
        upper = [v[0] for v in climbing]
        lower = [v[1] for v in climbing]
        self.assertTrue(np.all(np.diff(upper) >= 0))
        self.assertTrue(np.all(np.diff(lower) <= 0))
        self.assertLessEqual(upper[-1], self.case.d[0])
        self.assertGreaterEqual(lower[-1], -self.case.c[1])
        self.assertAlmostEqual(upper[-1], self.case.d[0], places=12)

    def test_state_from_xi(self):
        state = state_from_xi(self.case, [0.3, -1.2], 1.5)
        np.testing.assert_allclose(transform(self.case, state, 1.5).xi, [0.3, -1.2], atol=1e-12)
