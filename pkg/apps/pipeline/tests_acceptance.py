"""
End-to-end checks of the case study. Slow: run with `manage.py test --tag=acceptance`.
"""

import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.test import SimpleTestCase, tag

from apps.bounds.coverage import calibrate_envelope
from apps.pipeline import artifacts
from apps.sim.integrate import Trajectory
from apps.sim.plants import case_study_plant

CASE_STUDY_INI = Path(__file__).resolve().parents[2] / 'config' / 'case_study.ini'


def reproduce(out, **options):
    call_command('reproduce_case_study', config=str(CASE_STUDY_INI), out=str(out), quiet=True,
                 stdout=StringIO(), **options)


@tag('acceptance', 'slow')
class CaseStudyTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.run_dir = Path(cls.tmp.name) / 'case_study'
        reproduce(cls.run_dir)
        cls.summary = pd.read_csv(cls.run_dir / 'summary.csv').set_index('metric')
        cls.audit = pd.read_csv(cls.run_dir / 'audit.csv')

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def metric(self, name):
        return float(self.summary.loc[name, 'produced'])

    def test_summary_has_every_comparison_row(self):
        for name in ('sigma_bar_1', 'sigma_bar_2', 'sigma_bar_max', 'coverage_p_lo', 'coverage_p_hi',
                     'beta_det_1', 'beta_det_2', 'envelope_det_1', 'envelope_det_2',
                     'envelope_sure_1', 'envelope_sure_2', 'reach_fraction', 'funnel_violations'):
            self.assertIn(name, self.summary.index)
        self.assertFalse(self.summary['paper'].isna().any())

    def test_every_grid_start_reaches_goal_inside_funnel(self):
        self.assertEqual(len(self.audit), 16)
        self.assertTrue(self.audit['reach_time'].notna().all())
        self.assertTrue((self.audit['reach_time'] <= 10.0).all())
        self.assertEqual(int(self.audit['violations'].sum()), 0)
        self.assertEqual(self.metric('reach_fraction'), 1.0)
        self.assertEqual(self.metric('funnel_violations'), 0.0)

    def test_monte_carlo_interval(self):
        coverage = pd.read_csv(self.run_dir / 'coverage.csv').iloc[0]
        self.assertEqual(coverage['trials'], 1_000_000)
        self.assertGreaterEqual(coverage['p_lo'], 0.95)
        self.assertLessEqual(coverage['p_hi'] - coverage['p_lo'], 0.01)

    def test_deterministic_envelope_is_more_conservative(self):
        model = artifacts.load_model(self.run_dir / artifacts.MODEL_FILE)
        plant = case_study_plant()
        calibrated = calibrate_envelope(model, plant.drift, plant.state_box, 0.99, 200_000, seed=1)
        for i in range(2):
            deterministic = self.metric(f'envelope_det_{i + 1}')
            self.assertTrue(np.isfinite(deterministic))
            self.assertGreater(deterministic, calibrated[i])
            self.assertGreater(deterministic, self.metric(f'envelope_sure_{i + 1}'))

    def test_lyapunov_decrease_along_trajectories(self):
        dt = 1e-3
        for index in range(16):
            traj = Trajectory.read_csv(self.run_dir / f'trajectory_{index:02d}.csv')
            if len(traj) < 3:
                continue
            v_dot = np.gradient(traj.lyapunov, dt)[1:-1]
            ok = v_dot <= traj.decrement[1:-1] + 1e-2
            self.assertGreaterEqual(ok.mean(), 0.99, f'trajectory {index}')

    def test_artifact_bundle(self):
        for name in ('config.ini', 'dataset.csv', 'model.json', 'bounds.json', 'bounds_deterministic.json',
                     'funnel.json', 'funnel_bounds.csv', 'coverage.csv', 'coverage.txt', 'audit.csv',
                     'state_space.svg', 'funnel_bounds.svg', 'summary.csv', 'metadata.json'):
            self.assertTrue((self.run_dir / name).exists(), name)
        metadata = json.loads((self.run_dir / artifacts.METADATA_FILE).read_text())
        self.assertEqual(metadata['commands'][-1]['command'], 'reproduce_case_study')


@tag('acceptance', 'slow')
class ReproducibilityTests(SimpleTestCase):

    def bundle(self, out):
        return {path.name: path.read_bytes() for path in sorted(Path(out).iterdir())
                if path.name != artifacts.METADATA_FILE}

    def test_same_seed_gives_identical_bundles(self):
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Path(tmp) / 'a', Path(tmp) / 'b'
            for out in (first, second):
                reproduce(out, trials=20_000, grid=2)
            self.assertEqual(self.bundle(first), self.bundle(second))

    def test_changed_seed_changes_dataset(self):
        with tempfile.TemporaryDirectory() as tmp:
            for seed in (0, 1):
                call_command('learn', config=str(CASE_STUDY_INI), out=str(Path(tmp) / str(seed)),
                             seed=seed, quiet=True, stdout=StringIO())
            first = (Path(tmp) / '0' / 'dataset.csv').read_bytes()
            second = (Path(tmp) / '1' / 'dataset.csv').read_bytes()
        self.assertNotEqual(first, second)
