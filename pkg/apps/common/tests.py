import numpy as np
from django.test import SimpleTestCase

from apps.common.boxes import StateBox, as_vector
from apps.common.exceptions import (
    ConfigError, DegenerateDim, DomainError, FunnelExit, GPReachError, InfeasibleGoal,
    NegativeRadicand, NumericalBlowup, OutsideFunnel, SingularInputMap,
)


class AsVectorTests(SimpleTestCase):

    def test_flattens_and_freezes(self):
        vector = as_vector([[1, 2], [3, 4]])
        np.testing.assert_array_equal(vector, [1.0, 2.0, 3.0, 4.0])
        with self.assertRaises(ValueError):
            vector[0] = 5.0

    def test_rejects_empty_and_non_finite(self):
        with self.assertRaises(DomainError):
            as_vector([])
        with self.assertRaises(DomainError):
            as_vector([1.0, np.nan])


class StateBoxTests(SimpleTestCase):

    def test_geometry(self):
        box = StateBox.from_bounds([-3, 1], [-2, 3])
        self.assertEqual(box.n, 2)
        np.testing.assert_array_equal(box.width, [1, 2])
        np.testing.assert_array_equal(box.center, [-2.5, 2])
        self.assertEqual(str(box), '[-3, -2] x [1, 3]')

    def test_contains_closed_and_open(self):
        box = StateBox.cube(1, 3, 2)
        self.assertTrue(box.contains([1.0, 3.0]))
        self.assertFalse(box.contains([1.0, 3.0], strict=True))
        np.testing.assert_array_equal(box.contains([[2, 2], [0, 2], [3.5, 1]]), [True, False, False])

    def test_subset(self):
        self.assertTrue(StateBox.cube(1, 3, 2).is_subset_of(StateBox.cube(-5, 5, 2)))
        self.assertFalse(StateBox.cube(4, 6, 2).is_subset_of(StateBox.cube(-5, 5, 2)))

    def test_degenerate_box_has_no_interior(self):
        box = StateBox.from_bounds([0, 0], [0, 1])
        self.assertFalse(box.has_interior)
        with self.assertRaises(DomainError):
            box.require_interior('start box')

    def test_invalid_bounds(self):
        with self.assertRaises(DomainError):
            StateBox.from_bounds([1, 0], [0, 1])
        with self.assertRaises(DomainError):
            StateBox.from_bounds([0, 0], [1])

    def test_grid_and_samples(self):
        box = StateBox.cube(-1, 1, 2)
        grid = box.grid(3)
        self.assertEqual(grid.shape, (9, 2))
        np.testing.assert_array_equal(grid[0], [-1, -1])
        np.testing.assert_array_equal(grid[-1], [1, 1])
        samples = box.sample_uniform(np.random.default_rng(0), 500)
        self.assertTrue(np.all(box.contains(samples)))

    def test_dict_round_trip(self):
        box = StateBox.from_bounds([-3, 1], [-2, 3])
        self.assertEqual(StateBox.from_dict(box.to_dict()), box)


class ExitCodeTests(SimpleTestCase):

    def test_codes(self):
        cases = [
            (ConfigError('bad'), 2),
            (DomainError('bad'), 2),
            (NegativeRadicand(0, -1.0), 2),
            (SingularInputMap('bad'), 2),
            (InfeasibleGoal('bad'), 3),
            (DegenerateDim('bad', dim=1), 3),
            (OutsideFunnel(0, 'upper', 1.2, 1.0), 4),
            (FunnelExit(5, 0.005, 1, 'lower'), 4),
            (NumericalBlowup(3, 0.003), 4),
        ]
        for error, code in cases:
            with self.subTest(error=type(error).__name__):
                self.assertIsInstance(error, GPReachError)
                self.assertEqual(error.exit_code, code)

    def test_messages_carry_context(self):
        self.assertIn('increase the RKHS norm bound B_2', str(NegativeRadicand(1, -3.0)))
        self.assertIn('dimension 2 through the lower bound', str(FunnelExit(5, 0.005, 1, 'lower')))
        self.assertIsInstance(DomainError('x'), ValueError)
