import math
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag

from apps.bounds.coverage import calibrate_envelope
from apps.bounds.envelopes import BoundSet
from apps.common.boxes import StateBox
from apps.common.exceptions import ConfigError, DomainError, FunnelExit, NumericalBlowup
from apps.controller.law import ControlLaw
from apps.funnel.synthesis import FunnelSpec, synthesize
from apps.gp.data import Dataset
from apps.gp.kernels import KernelParams
from apps.gp.regression import fit_posterior, max_std
from apps.sim.audit import funnel_audit, reach_check, start_grid
from apps.sim.integrate import SimConfig, Trajectory, integrate, rk4_step
from apps.sim.plants import (
    Plant, case_study_plant, get_plant, integrator_plant, sample_measurements, shifted_sigmoid,
)

CASE_START = StateBox.cube(-3, -2, 2)
CASE_GOAL = StateBox.cube(1, 3, 2)


def case_study_law(scale=(0.0, 0.0)):
    plant = case_study_plant()
    data = sample_measurements(plant, plant.state_box, 50, 0.01, seed=0)
    model = fit_posterior(data, KernelParams([1.0, 1.0], np.full((2, 2), 2.0)), plant.state_box)
    spec = synthesize(CASE_START, CASE_GOAL, plant.state_box, eps=[1.0, 1.0])
    return plant, ControlLaw(model, BoundSet('deterministic', scale, 1.0), spec)


def integrator_law(spec=None):
    plant = integrator_plant(2)
    rng = np.random.default_rng(1)
    inputs = rng.uniform(-5, 5, size=(10, 2))
    model = fit_posterior(Dataset(inputs, np.zeros((10, 2)), 0.1), KernelParams([1.0, 1.0], np.ones((2, 2))))
    spec = spec or FunnelSpec([0.0, 0.0], [2.0, 2.0], [0.5, 0.5], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0])
    return plant, ControlLaw(model, BoundSet('deterministic', [0.0, 0.0], 1.0), spec)


def nan_plant() -> Plant:
    return Plant('nan', lambda x: np.full_like(x, np.nan), lambda x: np.eye(x.shape[-1]),
                 StateBox.cube(-5, 5, 2), 2)


class PlantTests(SimpleTestCase):

    def test_case_study_drift(self):
        plant = case_study_plant()
        np.testing.assert_allclose(plant.f([0.0, 1.0]), [0.0, 1.0], atol=1e-15)
        x1, x2 = math.pi, 2.0
        expected = [x1 + (math.cos(x1) - 1) * x2, -(1 / (1 + math.exp(-2 * x1)) - 0.5) + x2]
        np.testing.assert_allclose(plant.f([x1, x2]), expected, rtol=1e-14)

    def test_drift_is_vectorised(self):
        plant = case_study_plant()
        points = np.array([[0.0, 1.0], [math.pi, 2.0], [-1.0, -4.0]])
        batch = plant.f(points)
        for row, x in zip(batch, points):
            np.testing.assert_allclose(row, plant.f(x), rtol=1e-15)

    def test_shifted_sigmoid_is_odd(self):
        z = np.linspace(-4, 4, 9)
        np.testing.assert_allclose(shifted_sigmoid(-z), -shifted_sigmoid(z), atol=1e-15)
        self.assertEqual(shifted_sigmoid(0.0), 0.0)

    def test_input_map_is_identity(self):
        np.testing.assert_array_equal(case_study_plant().g([1.0, -2.0]), np.eye(2))

    def test_registry(self):
        self.assertEqual(get_plant('case_study').n, 2)
        self.assertEqual(get_plant('integrator').name, 'integrator')
        with self.assertRaises(ConfigError):
            get_plant('pendulum')


class MeasurementTests(SimpleTestCase):

    def test_uniform_samples_are_noisy_drift_values(self):
        plant = case_study_plant()
        data = sample_measurements(plant, plant.state_box, 200, 0.01, seed=3)
        self.assertEqual((data.N, data.n), (200, 2))
        self.assertTrue(np.all(plant.state_box.contains(data.inputs)))
        residual = data.targets - plant.f(data.inputs)
        self.assertLess(abs(residual.std() - 0.01), 0.002)

    def test_noise_free_samples_are_exact(self):
        plant = case_study_plant()
        data = sample_measurements(plant, plant.state_box, 20, 0.0, seed=3)
        np.testing.assert_array_equal(data.targets, plant.f(data.inputs))

    def test_seed_fixes_dataset(self):
        plant = case_study_plant()
        a = sample_measurements(plant, plant.state_box, 30, 0.01, seed=7)
        b = sample_measurements(plant, plant.state_box, 30, 0.01, seed=7)
        c = sample_measurements(plant, plant.state_box, 30, 0.01, seed=8)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.targets, b.targets)
        self.assertFalse(np.array_equal(a.inputs, c.inputs))

    def test_trajectory_sampling_stays_in_box(self):
        plant = case_study_plant()
        box = StateBox.cube(-2, 2, 2)
        data = sample_measurements(plant, box, 40, 0.0, seed=0, mode='trajectory')
        self.assertEqual(data.N, 40)
        self.assertTrue(np.all(box.contains(data.inputs)))

    def test_invalid_arguments(self):
        plant = case_study_plant()
        with self.assertRaises(DomainError):
            sample_measurements(plant, plant.state_box, 0, 0.01)
        with self.assertRaises(DomainError):
            sample_measurements(plant, plant.state_box, 10, -0.1)
        with self.assertRaises(ConfigError):
            sample_measurements(plant, plant.state_box, 10, 0.01, mode='grid')


class SimConfigTests(SimpleTestCase):

    def test_defaults(self):
        cfg = SimConfig()
        self.assertEqual((cfg.dt, cfg.t_max, cfg.integrator), (1e-3, 10.0, 'rk4'))
        self.assertEqual(cfg.steps, 10_000)

    def test_overrides_skip_none(self):
        cfg = SimConfig().with_overrides(dt=0.01, t_max=None, stop_on_reach=True)
        self.assertEqual((cfg.dt, cfg.t_max, cfg.stop_on_reach), (0.01, 10.0, True))

    def test_invalid_values(self):
        with self.assertRaises(ConfigError):
            SimConfig(dt=0.0)
        with self.assertRaises(ConfigError):
            SimConfig(dt=2.0, t_max=1.0)
        with self.assertRaises(ConfigError):
            SimConfig(integrator='midpoint')

    def test_integration_takes_no_seed(self):
        self.assertEqual([f.name for f in fields(SimConfig)],
                         ['dt', 't_max', 'integrator', 'stop_on_reach'])
        with self.assertRaises(TypeError):
            SimConfig(seed=1)

    def test_repeated_runs_are_identical(self):
        plant, law = integrator_law()
        cfg = SimConfig(dt=0.01, t_max=1.0)
        first = integrate(plant, law, [1.0, -0.5], cfg)
        second = integrate(plant, law, [1.0, -0.5], cfg)
        np.testing.assert_array_equal(first.states, second.states)
        np.testing.assert_array_equal(first.inputs, second.inputs)


class StepperTests(SimpleTestCase):

    def test_rk4_is_exact_for_cubic_time_fields(self):
        def field(t, y):
            return np.array([3 * t ** 2])

        y = rk4_step(field, 1.0, np.array([1.0]), 0.5)
        self.assertAlmostEqual(y[0], 1.0 + 1.5 ** 3 - 1.0, places=12)

    def test_rk4_order_on_exponential_decay(self):
        def field(t, y):
            return -y

        errors = []
        for h in (0.1, 0.05):
            y = np.array([1.0])
            for k in range(int(round(1 / h))):
                y = rk4_step(field, k * h, y, h)
            errors.append(abs(y[0] - math.exp(-1)))
        self.assertGreater(math.log2(errors[0] / errors[1]), 3.8)


class IntegrateTests(SimpleTestCase):

    def test_equilibrium_at_eta_stays_put(self):
        plant, law = integrator_law()
        traj = integrate(plant, law, law.spec.eta, SimConfig(dt=0.01, t_max=2.0))
        self.assertEqual(traj.status, 'completed')
        self.assertEqual(len(traj), 201)
        np.testing.assert_allclose(traj.states, np.zeros_like(traj.states), atol=1e-12)
        np.testing.assert_allclose(traj.inputs, np.zeros_like(traj.inputs), atol=1e-12)

    def test_integrator_converges_to_eta(self):
        plant, law = integrator_law()
        traj = integrate(plant, law, [1.5, -1.2], SimConfig(dt=0.01, t_max=5.0))
        self.assertLess(np.abs(traj.final_state).max(), 0.05)
        self.assertTrue(funnel_audit(traj, law.spec).ok)

    def test_time_grid(self):
        plant, law = integrator_law()
        traj = integrate(plant, law, [0.5, 0.5], SimConfig(dt=0.05, t_max=1.0))
        np.testing.assert_allclose(traj.times, 0.05 * np.arange(21), atol=1e-15)

    def test_stop_on_reach(self):
        plant, law = integrator_law()
        goal = StateBox.cube(-0.5, 0.5, 2)
        cfg = SimConfig(dt=0.01, t_max=5.0)
        full = integrate(plant, law, [1.5, 1.5], cfg, goal=goal)
        stopped = integrate(plant, law, [1.5, 1.5], cfg.with_overrides(stop_on_reach=True), goal=goal)
        self.assertEqual(full.status, 'completed')
        self.assertEqual(len(full), cfg.steps + 1)
        self.assertEqual(stopped.status, 'reached')
        self.assertEqual(stopped.reach_time, full.reach_time)
        self.assertAlmostEqual(stopped.times[-1], stopped.reach_time)
        self.assertEqual(reach_check(full, goal), full.reach_time)

    def test_start_outside_funnel_raises_at_step_zero(self):
        plant, law = integrator_law()
        with self.assertRaises(FunnelExit) as ctx:
            integrate(plant, law, [2.9, 0.0], SimConfig(dt=0.01, t_max=1.0))
        self.assertEqual(ctx.exception.step, 0)
        self.assertEqual(ctx.exception.dim, 0)
        self.assertEqual(ctx.exception.boundary, 'upper')
        self.assertEqual(len(ctx.exception.trajectory), 0)
        self.assertEqual(ctx.exception.trajectory.status, 'funnel_exit')
        self.assertEqual(ctx.exception.exit_code, 4)

    def test_non_finite_state_raises_blowup(self):
        _, law = integrator_law()
        with self.assertRaises(NumericalBlowup) as ctx:
            integrate(nan_plant(), law, [0.5, 0.5], SimConfig(dt=0.01, t_max=1.0, integrator='euler'))
        self.assertEqual(ctx.exception.step, 1)
        self.assertEqual(len(ctx.exception.trajectory), 1)
        self.assertEqual(ctx.exception.exit_code, 4)

    def test_non_finite_stage_state_is_a_funnel_exit(self):
        _, law = integrator_law()
        with self.assertRaises(FunnelExit) as ctx:
            integrate(nan_plant(), law, [0.5, 0.5], SimConfig(dt=0.01, t_max=1.0))
        self.assertEqual(ctx.exception.step, 1)

    def test_wrong_start_dimension(self):
        plant, law = integrator_law()
        with self.assertRaises(DomainError):
            integrate(plant, law, [0.0, 0.0, 0.0], SimConfig(dt=0.01, t_max=1.0))

    @tag('slow')
    def test_rk4_convergence_on_case_study(self):
        plant, smooth = case_study_law()
        model = smooth.model
        sure = calibrate_envelope(model, plant.drift, plant.state_box, 1.0, 20_000, seed=0)
        scale = sure / max_std(model, plant.state_box, 41)
        _, law = case_study_law(scale=scale)
        x0, t_max = [-3.4, -3.4], 0.2
        dts = np.array([4e-3, 2e-3, 1e-3, 5e-4])
        reference = integrate(plant, law, x0, SimConfig(dt=dts[-1] / 16, t_max=t_max))
        # sign(x - eta) stays fixed, so the closed-loop field is smooth on this window
        self.assertTrue(np.all(reference.states < law.spec.eta))
        errors = [np.abs(integrate(plant, law, x0, SimConfig(dt=dt, t_max=t_max)).final_state
                         - reference.final_state).max() for dt in dts]
        order = np.polyfit(np.log(dts), np.log(errors), 1)[0]
        self.assertGreaterEqual(order, 3.5)

    def test_case_study_trajectory_reaches_goal(self):
        plant, law = case_study_law(scale=(2.0, 2.0))
        traj = integrate(plant, law, [-2.5, -2.5], SimConfig(dt=0.01, t_max=10.0), goal=CASE_GOAL)
        self.assertIsNotNone(traj.reach_time)
        self.assertTrue(funnel_audit(traj, law.spec).ok)
        self.assertTrue(CASE_GOAL.contains(traj.final_state))

    def test_lyapunov_decrease_bound_with_exact_model(self):
        plant, law = integrator_law()
        dt = 0.001
        traj = integrate(plant, law, [1.5, -1.2], SimConfig(dt=dt, t_max=3.0))
        v_dot = np.gradient(traj.lyapunov, dt)[1:-1]
        ok = v_dot <= traj.decrement[1:-1] + 1e-2
        self.assertGreaterEqual(ok.mean(), 0.99)
        self.assertTrue(np.all(np.diff(traj.lyapunov) <= 0))


class TrajectoryFileTests(SimpleTestCase):

    def test_csv_keeps_every_column(self):
        plant, law = integrator_law()
        traj = integrate(plant, law, [1.0, -1.0], SimConfig(dt=0.1, t_max=1.0))
        with tempfile.TemporaryDirectory() as tmp:
            path = traj.write_csv(Path(tmp) / 'trajectory_00.csv')
            loaded = Trajectory.read_csv(path, status=traj.status)
        for name in ('times', 'states', 'inputs', 'xi', 'lyapunov', 'decrement', 'lower', 'upper'):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(traj, name), err_msg=name)
        np.testing.assert_array_equal(loaded.contained, traj.contained)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            Trajectory.read_csv('/nonexistent/trajectory.csv')


class AuditTests(SimpleTestCase):

    def spec(self):
        return FunnelSpec([0.0], [1.0], [0.5], [1.0], [1.0], [1.0])

    def trajectory(self, states):
        states = np.asarray(states, dtype=float).reshape(-1, 1)
        times = np.arange(states.shape[0], dtype=float)
        empty = np.zeros_like(states)
        return Trajectory(times, states, empty, empty, times * 0, times * 0, empty, empty,
                          np.ones(times.size, dtype=bool))

    def test_margins_inside_funnel(self):
        audit = funnel_audit(self.trajectory([0.0, 0.2]), self.spec())
        # rho(0) = 1.5, rho(1) = exp(-1) + 0.5
        self.assertAlmostEqual(audit.margins[0, 0], 1.5)
        self.assertAlmostEqual(audit.margins[1, 0], math.exp(-1) + 0.5 - 0.2)
        self.assertTrue(audit.ok)

    def test_violations_are_reported(self):
        audit = funnel_audit(self.trajectory([0.0, 1.0, -0.1]), self.spec())
        np.testing.assert_array_equal(audit.violations, [1])
        self.assertLess(audit.min_margin, 0)
        self.assertFalse(audit.ok)

    def test_empty_trajectory(self):
        plant, law = integrator_law()
        with self.assertRaises(FunnelExit) as ctx:
            integrate(plant, law, [4.0, 0.0], SimConfig(dt=0.1, t_max=1.0))
        audit = funnel_audit(ctx.exception.trajectory, law.spec)
        self.assertTrue(audit.ok)
        self.assertEqual(audit.min_margin, float('inf'))

    def test_reach_check(self):
        goal = StateBox.cube(0.5, 1.5, 1)
        traj = self.trajectory([0.0, 0.2, 0.6, 1.0])
        self.assertEqual(reach_check(traj, goal), 2.0)
        self.assertIsNone(reach_check(self.trajectory([0.0, 0.1]), goal))


class StartGridTests(SimpleTestCase):

    def test_grid_includes_corners(self):
        points = start_grid(CASE_START, 4)
        self.assertEqual(points.shape, (16, 2))
        for corner in ([-3, -3], [-3, -2], [-2, -3], [-2, -2]):
            self.assertTrue(np.any(np.all(np.isclose(points, corner), axis=1)), corner)
        self.assertTrue(np.all(CASE_START.contains(points)))

    def test_single_point_is_center(self):
        np.testing.assert_array_equal(start_grid(CASE_START, 1), [[-2.5, -2.5]])

    def test_invalid_count(self):
        with self.assertRaises(DomainError):
            start_grid(CASE_START, 0)
