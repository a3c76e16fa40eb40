import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from apps.bounds.envelopes import BoundSet
from apps.common.boxes import StateBox
from apps.common.exceptions import ConfigError
from apps.funnel.synthesis import synthesize
from apps.gp.data import Dataset
from apps.gp.kernels import KernelParams
from apps.gp.regression import fit_posterior
from apps.pipeline import artifacts
from apps.pipeline.config import RunConfig
from apps.pipeline.plots import render_funnel_bounds, render_state_space
from apps.pipeline.services import REFERENCE_VALUES, PipelineService, summary_frame
from apps.sim.integrate import SimConfig, integrate
from apps.sim.plants import case_study_plant
from apps.controller.law import ControlLaw

FAST_INI = """
[dataset]
size = 30
noise_std = 0.01

[kernel]
fit = false
signal_std = 2, 2
lengthscales = 1.5, 1.5; 1.5, 1.5

[bounds]
trials = 2000
envelope = 0.5, 0.5
rkhs_norm = 10000, 10000

[sim]
dt = 0.01
t_max = 2
"""


def fast_config(**sections) -> RunConfig:
    text = FAST_INI
    for name, body in sections.items():
        text += f"\n[{name}]\n{body}\n"
    return RunConfig.parse(text)


class RunConfigTests(SimpleTestCase):

    def test_empty_file_gives_case_study_defaults(self):
        config = RunConfig.parse('')
        self.assertEqual(config.plant.name, 'case_study')
        self.assertEqual(config.dataset.size, 50)
        self.assertEqual(config.dataset.noise_std, 0.01)
        self.assertEqual(config.kernel.signal_std, (316.0, 25.3))
        self.assertEqual(config.kernel.lengthscales, ((2.9, 177.0), (1.67, 50.5)))
        self.assertEqual(config.bounds.envelope, (0.04, 0.04))
        self.assertEqual(config.bounds.trials, 1_000_000)
        self.assertEqual(config.funnel.start, StateBox.cube(-3, -2, 2))
        self.assertEqual(config.funnel.goal, StateBox.cube(1, 3, 2))
        self.assertEqual((config.sim.dt, config.sim.t_max), (0.001, 10.0))
        self.assertEqual(config.n, 2)

    def test_round_trip(self):
        config = fast_config(funnel='eta = 2, 2.5\nshrink = 0.25', sim='x0 = -2.2, -2.8\ngrid = 3')
        self.assertEqual(RunConfig.parse(config.to_ini()), config)

    def test_case_study_file_parses(self):
        path = Path(__file__).resolve().parents[2] / 'config' / 'case_study.ini'
        config = RunConfig.load(path)
        self.assertEqual(config.sim.grid, 4)
        self.assertEqual(config.bounds.method, 'monte_carlo')

    def test_unknown_key_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            RunConfig.parse('[bounds]\ntrails = 10\n')
        self.assertIn('trails', str(ctx.exception))

    def test_unknown_section_is_rejected(self):
        with self.assertRaises(ConfigError):
            RunConfig.parse('[solver]\ndt = 0.1\n')

    def test_ranges_are_validated(self):
        for text in ('[bounds]\nepsilon = 1.5', '[dataset]\nsize = 0', '[sim]\ndt = -1',
                     '[funnel]\nshrink = 0', '[bounds]\nmethod = exact', '[dataset]\nnoise_std = abc'):
            with self.subTest(text=text):
                with self.assertRaises(ConfigError):
                    RunConfig.parse(text)

    def test_dimensions_must_agree(self):
        with self.assertRaises(ConfigError):
            RunConfig.parse('[sim]\nx0 = 1, 2, 3\n')

    def test_invalid_box(self):
        with self.assertRaises(ConfigError):
            RunConfig.parse('[funnel]\ngoal_lower = 3, 3\ngoal_upper = 1, 1\n')

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            RunConfig.load('/nonexistent/run.ini')

    def test_dataset_path_is_relative_to_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.ini'
            path.write_text('[dataset]\npath = data/samples.csv\n')
            config = RunConfig.load(path)
        self.assertEqual(Path(config.dataset.path), Path(tmp) / 'data' / 'samples.csv')

    def test_overrides(self):
        config = RunConfig().with_overrides(seed=5, trials=100, grid=2, no_fit=True, out='/tmp/x')
        self.assertEqual((config.dataset.seed, config.bounds.seed), (5, 5))
        self.assertEqual(config.bounds.trials, 100)
        self.assertEqual(config.sim.grid, 2)
        self.assertFalse(config.kernel.fit)
        self.assertEqual(config.output.directory, '/tmp/x')


class ArtifactTests(SimpleTestCase):

    def model(self):
        rng = np.random.default_rng(0)
        inputs = rng.uniform(-5, 5, size=(15, 2))
        data = Dataset(inputs, np.sin(inputs), 0.05)
        return fit_posterior(data, KernelParams([1.0, 2.0], [[1.0, 2.0], [1.5, 0.5]]), StateBox.cube(-5, 5, 2))

    def test_model_reloads_to_same_posterior(self):
        model = self.model()
        query = np.random.default_rng(1).uniform(-5, 5, size=(20, 2))
        with tempfile.TemporaryDirectory() as tmp:
            path = artifacts.save_model(model, Path(tmp) / artifacts.MODEL_FILE, {'sigma_bar': [0.1, 0.2]})
            loaded = artifacts.load_model(path)
            report = artifacts.model_report(path)
        mean, std = model.predict(query)
        loaded_mean, loaded_std = loaded.predict(query)
        np.testing.assert_array_equal(loaded_mean, mean)
        np.testing.assert_array_equal(loaded_std, std)
        self.assertEqual(report['sigma_bar'], [0.1, 0.2])

    def test_bounds_and_funnel_files(self):
        bound = BoundSet('monte_carlo', [0.5, 0.7], 0.99, 0.005, {'hits': 990})
        start, goal, box = StateBox.cube(-3, -2, 2), StateBox.cube(1, 3, 2), StateBox.cube(-5, 5, 2)
        spec = synthesize(start, goal, box, eps=[1.0, 1.0])
        with tempfile.TemporaryDirectory() as tmp:
            bound_path = artifacts.save_bounds(bound, Path(tmp) / artifacts.BOUNDS_FILE)
            funnel_path = artifacts.save_funnel(spec, Path(tmp) / artifacts.FUNNEL_FILE, start, goal, box)
            loaded_bound = artifacts.load_bounds(bound_path)
            loaded_spec = artifacts.load_funnel(funnel_path)
            boxes = artifacts.load_funnel_boxes(funnel_path)
        np.testing.assert_array_equal(loaded_bound.scale, bound.scale)
        self.assertEqual((loaded_bound.kind, loaded_bound.confidence), ('monte_carlo', 0.99))
        self.assertEqual(loaded_spec, spec)
        self.assertEqual(boxes, (start, goal, box))

    def test_wrong_format_is_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'bounds.json'
            path.write_text(json.dumps({'format': artifacts.MODEL_FORMAT, 'version': 1}))
            with self.assertRaises(ConfigError):
                artifacts.load_bounds(path)
            path.write_text('{not json')
            with self.assertRaises(ConfigError):
                artifacts.load_bounds(path)
            with self.assertRaises(ConfigError):
                artifacts.load_model(Path(tmp) / 'missing.json')

    def test_metadata_accumulates_commands(self):
        with tempfile.TemporaryDirectory() as tmp:
            artifacts.write_metadata(tmp, 'learn', seed=3)
            artifacts.write_metadata(tmp, 'calibrate', method='deterministic')
            metadata = json.loads((Path(tmp) / artifacts.METADATA_FILE).read_text())
        self.assertEqual([c['command'] for c in metadata['commands']], ['learn', 'calibrate'])
        self.assertEqual(metadata['commands'][0]['seed'], 3)
        self.assertIn('finished', metadata['commands'][1])

    def test_metadata_keeps_latest_run_per_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            for seed in range(5):
                artifacts.write_metadata(tmp, 'learn', seed=seed)
            artifacts.write_metadata(tmp, 'simulate')
            artifacts.write_metadata(tmp, 'learn', seed=9)
            metadata = json.loads((Path(tmp) / artifacts.METADATA_FILE).read_text())
        self.assertEqual([c['command'] for c in metadata['commands']], ['simulate', 'learn'])
        self.assertEqual(metadata['commands'][1]['seed'], 9)


class PlotTests(SimpleTestCase):

    def test_svg_files(self):
        plant = case_study_plant()
        rng = np.random.default_rng(0)
        inputs = rng.uniform(-5, 5, size=(30, 2))
        model = fit_posterior(Dataset(inputs, plant.f(inputs), 0.01), KernelParams([2.0, 2.0], np.full((2, 2), 1.5)))
        start, goal = StateBox.cube(-3, -2, 2), StateBox.cube(1, 3, 2)
        spec = synthesize(start, goal, plant.state_box, eps=[1.0, 1.0])
        law = ControlLaw(model, BoundSet('deterministic', [1.0, 1.0], 1.0), spec)
        traj = integrate(plant, law, [-2.5, -2.5], SimConfig(dt=0.01, t_max=1.0))
        with tempfile.TemporaryDirectory() as tmp:
            state_path = render_state_space([traj], plant.state_box, start, goal, Path(tmp) / 'state_space.svg')
            funnel_path = render_funnel_bounds([traj], spec, Path(tmp) / 'funnel_bounds.svg')
            state_svg = state_path.read_text()
            funnel_svg = funnel_path.read_text()
        self.assertIn('<svg', state_svg)
        self.assertIn('X_b', state_svg)
        self.assertIn('<polyline', state_svg)
        self.assertIn('x_2', funnel_svg)


class SummaryTests(SimpleTestCase):

    def test_deviation_columns(self):
        frame = summary_frame({'sigma_bar_max': 0.0308, 'funnel_violations': 0.0, 'beta_det_1': 7.0878,
                               'extra_metric': 1.0})
        self.assertEqual(list(frame.columns), ['metric', 'produced', 'paper', 'deviation'])
        rows = frame.set_index('metric')
        self.assertAlmostEqual(rows.loc['sigma_bar_max', 'deviation'], 0.0308 / 0.0616 - 1)
        self.assertEqual(rows.loc['funnel_violations', 'deviation'], 0.0)
        self.assertAlmostEqual(rows.loc['beta_det_1', 'deviation'], 0.0)
        self.assertTrue(pd.isna(rows.loc['extra_metric', 'paper']))
        self.assertEqual(frame['metric'].iloc[-1], 'extra_metric')

    def test_reference_values(self):
        self.assertEqual(REFERENCE_VALUES['sigma_bar_max'], 0.0616)
        self.assertEqual((REFERENCE_VALUES['coverage_p_lo'], REFERENCE_VALUES['coverage_p_hi']), (0.9894, 0.9907))


class PipelineServiceTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.run_dir = Path(self.tmp.name)

    def service(self, config=None, run_dir=None, distribute=False):
        return PipelineService(config or fast_config(), run_dir=run_dir or self.run_dir, distribute=distribute)

    def test_config_snapshot_has_no_output_directory(self):
        self.service(fast_config().with_overrides(out=str(self.run_dir)))
        saved = RunConfig.load(self.run_dir / artifacts.CONFIG_FILE)
        self.assertEqual(saved.output.directory, '')
        self.assertEqual(saved.dataset.size, 30)

    def test_learn_writes_model_and_dataset(self):
        result = self.service().learn()
        self.assertTrue((self.run_dir / 'dataset.csv').exists())
        report = artifacts.model_report(self.run_dir / artifacts.MODEL_FILE)
        self.assertEqual(report['sigma_bar'], result.sigma_bar.tolist())
        self.assertFalse(report['fitted'])
        np.testing.assert_array_equal(result.params.signal_std, [2.0, 2.0])

    def test_learn_is_reproducible(self):
        other = Path(self.tmp.name) / 'other'
        self.service().learn()
        self.service(run_dir=other).learn()
        for name in (artifacts.MODEL_FILE, 'dataset.csv', artifacts.CONFIG_FILE):
            self.assertEqual((self.run_dir / name).read_bytes(), (other / name).read_bytes(), name)

    def test_learn_from_dataset_file(self):
        plant = case_study_plant()
        inputs = np.random.default_rng(4).uniform(-5, 5, size=(12, 2))
        path = self.run_dir / 'samples.csv'
        frame = pd.DataFrame({'x_1': inputs[:, 0], 'x_2': inputs[:, 1]})
        targets = plant.f(inputs)
        frame['y_1'], frame['y_2'] = targets[:, 0], targets[:, 1]
        frame.to_csv(path, index=False)
        config = RunConfig.parse(FAST_INI.replace("[dataset]", f"[dataset]\npath = {path}"))
        result = self.service(config, run_dir=self.run_dir / 'run').learn()
        self.assertEqual(result.model.data.N, 12)

    def test_missing_dataset_file(self):
        config = RunConfig.parse(FAST_INI.replace('[dataset]', '[dataset]\npath = /nonexistent/data.csv'))
        with self.assertRaises(ConfigError) as ctx:
            self.service(config).learn()
        self.assertIn('/nonexistent/data.csv', str(ctx.exception))

    def test_deterministic_and_probabilistic_bounds(self):
        service = self.service()
        service.learn()
        deterministic = service.calibrate('deterministic').bound
        self.assertEqual(deterministic.kind, 'deterministic')
        self.assertEqual(deterministic.confidence, 1.0)
        self.assertTrue(np.all(deterministic.scale > 0))
        probabilistic = service.calibrate('probabilistic').bound
        self.assertEqual(probabilistic.kind, 'probabilistic')
        self.assertAlmostEqual(probabilistic.confidence, 0.99 ** 2)
        saved = artifacts.load_bounds(self.run_dir / artifacts.BOUNDS_FILE)
        np.testing.assert_array_equal(saved.scale, probabilistic.scale)

    def test_monte_carlo_bound_and_report(self):
        service = self.service()
        learned = service.learn()
        result = service.calibrate('monte_carlo')
        self.assertEqual(result.coverage.trials, 2000)
        np.testing.assert_allclose(result.bound.scale, 0.5 / learned.sigma_bar)
        row = pd.read_csv(self.run_dir / 'coverage.csv').iloc[0]
        self.assertEqual(row['hits'], result.coverage.hits)
        self.assertIn('sampled', (self.run_dir / 'coverage.txt').read_text())

    def test_distributed_coverage_matches_in_process(self):
        local = self.service()
        local.learn()
        remote = self.service(distribute=True)
        with self.settings(GPREACH_MC_CHUNK_SIZE=700):
            got = remote.coverage(remote.load_model()[0])
            expected = local.coverage(local.load_model()[0])
        self.assertEqual(got, expected)
        self.assertEqual(got.trials, 2000)

    def test_synthesize_writes_funnel_and_series(self):
        spec = self.service().synthesize()
        self.assertEqual(artifacts.load_funnel(self.run_dir / artifacts.FUNNEL_FILE), spec)
        series = pd.read_csv(self.run_dir / 'funnel_bounds.csv')
        self.assertEqual(list(series.columns), ['t', 'lb_1', 'ub_1', 'lb_2', 'ub_2'])
        self.assertEqual(series['t'].iloc[-1], 2.0)

    def test_simulate_needs_earlier_stages(self):
        with self.assertRaises(ConfigError):
            self.service().simulate()

    def test_simulate_grid(self):
        config = fast_config(sim='dt = 0.01\nt_max = 2\ngrid = 2')
        service = self.service(config)
        service.learn()
        service.calibrate('monte_carlo')
        service.synthesize()
        result = service.simulate()
        self.assertEqual(len(result.summaries), 4)
        self.assertEqual(result.violations, 0)
        for index in range(4):
            self.assertTrue((self.run_dir / f'trajectory_{index:02d}.csv').exists())
        audit = pd.read_csv(self.run_dir / 'audit.csv')
        self.assertEqual(len(audit), 4)
        self.assertIn('x0_1', audit.columns)
        self.assertTrue((self.run_dir / 'state_space.svg').exists())
        self.assertTrue((self.run_dir / 'funnel_bounds.svg').exists())


class CommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name) / 'run'
        self.config_path = Path(self.tmp.name) / 'run.ini'
        self.config_path.write_text(FAST_INI)

    def call(self, name, config=None, **options):
        stdout = StringIO()
        call_command(name, config=str(config or self.config_path), out=str(self.out), stdout=stdout, **options)
        return stdout.getvalue()

    def write_config(self, text):
        path = Path(self.tmp.name) / 'custom.ini'
        path.write_text(text)
        return path

    def test_full_pipeline(self):
        output = self.call('learn')
        self.assertIn('sigma_bar', output)
        output = self.call('calibrate', method='monte_carlo')
        self.assertIn('scales', output)
        output = self.call('synthesize')
        self.assertIn('rho_inf', output)
        output = self.call('simulate')
        self.assertIn('reach fraction', output)
        self.assertTrue((self.out / 'trajectory_00.csv').exists())
        metadata = json.loads((self.out / artifacts.METADATA_FILE).read_text())
        self.assertEqual([c['command'] for c in metadata['commands']],
                         ['learn', 'calibrate', 'synthesize', 'simulate'])

    def test_quiet_suppresses_output(self):
        self.assertEqual(self.call('learn', quiet=True), '')

    def test_no_fit_keeps_configured_hyperparameters(self):
        config = self.write_config(FAST_INI.replace('fit = false', 'fit = true'))
        self.call('learn', config=config, no_fit=True)
        document = json.loads((self.out / artifacts.MODEL_FILE).read_text())
        self.assertEqual(document['kernel']['signal_std'], [2.0, 2.0])

    def test_missing_config_exits_2(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('learn', config='/nonexistent/run.ini')
        self.assertEqual(ctx.exception.returncode, 2)

    def test_empty_dataset_file_exits_2(self):
        path = Path(self.tmp.name) / 'empty.csv'
        path.write_bytes(b'')
        config = self.write_config(FAST_INI.replace('[dataset]', f'[dataset]\npath = {path}'))
        with self.assertRaises(CommandError) as ctx:
            self.call('learn', config=config)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('empty.csv', str(ctx.exception))

    def test_unknown_key_exits_2(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('synthesize', config=self.write_config('[funnel]\nrate = 1, 1\n'))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('rate', str(ctx.exception))

    def test_negative_radicand_exits_2_with_hint(self):
        text = FAST_INI.replace('signal_std = 2, 2', 'signal_std = 0.1, 0.1').replace(
            'rkhs_norm = 10000, 10000', 'rkhs_norm = 0.1, 0.1')
        config = self.write_config(text)
        self.call('learn', config=config)
        with self.assertRaises(CommandError) as ctx:
            self.call('calibrate', config=config, method='deterministic')
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('increase the RKHS norm bound', str(ctx.exception))

    def test_infeasible_goal_exits_3(self):
        config = self.write_config(FAST_INI + '\n[funnel]\ngoal_lower = 4, 4\ngoal_upper = 6, 6\n')
        with self.assertRaises(CommandError) as ctx:
            self.call('synthesize', config=config)
        self.assertEqual(ctx.exception.returncode, 3)

    def test_start_outside_funnel_exits_4(self):
        config = self.write_config(FAST_INI.replace('[sim]', '[sim]\nx0 = -4.5, -4.5'))
        self.call('learn', config=config)
        self.call('calibrate', config=config)
        self.call('synthesize', config=config)
        with self.assertRaises(CommandError) as ctx:
            self.call('simulate', config=config)
        self.assertEqual(ctx.exception.returncode, 4)
        self.assertIn('step 0', str(ctx.exception))
        self.assertTrue((self.out / 'audit.csv').exists())
