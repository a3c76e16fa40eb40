"""
Pipeline stages behind the management commands.

Every stage reads and writes artifacts in one run directory, so stages can
be run one at a time or chained by reproduce().
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional
import logging

import numpy as np
import pandas as pd
from django.conf import settings

from apps.bounds.coverage import (
    CoverageReport, calibrate_envelope, chunk_plan, coverage_report, envelope_threshold,
    monte_carlo_coverage,
)
from apps.bounds.envelopes import (
    BoundSet, beta_deterministic, beta_probabilistic, estimate_lipschitz_sqrt, rkhs_bounds,
)
from apps.bounds.information import information_gain
from apps.bounds.tasks import coverage_chunk
from apps.common.exceptions import ConfigError, FunnelExit, GPReachError, NumericalBlowup
from apps.funnel.synthesis import FunnelSpec, funnel_series, settling_time, synthesize
from apps.gp.data import Dataset, read_dataset_csv, write_dataset_csv
from apps.gp.hyperparams import optimize_hyperparams
from apps.gp.kernels import KernelParams
from apps.gp.regression import GPModel, fit_posterior, max_std
from apps.sim.audit import start_grid
from apps.sim.integrate import Trajectory
from apps.sim.plants import get_plant, sample_measurements
from apps.sim.tasks import simulate_start, trajectory_filename
from . import artifacts
from .config import OutputSection, RunConfig
from .plots import render_funnel_bounds, render_state_space

logger = logging.getLogger(__name__)

# Start states per dimension when reproducing without an explicit [sim] grid.
REPRODUCE_GRID = 4

# Values reported for the two-state case study, compared in summary.csv.
REFERENCE_VALUES = {
    'sigma_bar_1': 0.022,
    'sigma_bar_2': 0.0616,
    'sigma_bar_max': 0.0616,
    'coverage_p_lo': 0.9894,
    'coverage_p_hi': 0.9907,
    'beta_det_1': 7.0878,
    'beta_det_2': 7.0710,
    'envelope_det_1': 0.1559,
    'envelope_det_2': 0.4366,
    'envelope_sure_1': 0.016,
    'envelope_sure_2': 0.0442,
    'reach_fraction': 1.0,
    'funnel_violations': 0.0,
}


@dataclass
class LearnResult:
    model: GPModel
    params: KernelParams
    sigma_bar: np.ndarray
    log_evidence: Optional[np.ndarray] = None


@dataclass
class CalibrationResult:
    bound: BoundSet
    coverage: Optional[CoverageReport] = None
    rkhs_norm: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None


@dataclass
class SimulationResult:
    summaries: List[Dict]
    trajectories: List[Trajectory] = field(default_factory=list)

    @property
    def reach_fraction(self) -> float:
        reached = sum(1 for s in self.summaries if s['reach_time'] is not None)
        return reached / len(self.summaries)

    @property
    def violations(self) -> int:
        return sum(s['violations'] for s in self.summaries)


class PipelineService:
    """Learn, calibrate, synthesize and simulate for one run configuration."""

    def __init__(self, config: RunConfig, run_dir=None, distribute: Optional[bool] = None):
        self.config = config
        self.run_dir = Path(run_dir or config.output.directory or settings.GPREACH_OUTPUT_DIR)
        self.distribute = settings.GPREACH_DISTRIBUTE if distribute is None else distribute
        self.plant = get_plant(config.plant.name)
        if self.plant.n != config.n:
            raise ConfigError(
                f"Plant {self.plant.name} has {self.plant.n} states but the config describes {config.n}"
            )
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._write_config()

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def _write_config(self):
        portable = replace(self.config, output=OutputSection())
        self.path(artifacts.CONFIG_FILE).write_text(portable.to_ini(), encoding='utf-8')

    # Learning

    def collect_dataset(self) -> Dataset:
        cfg = self.config.dataset
        if cfg.path:
            data = read_dataset_csv(cfg.path, cfg.noise_std)
            if data.n != self.plant.n:
                raise ConfigError(f"Dataset {cfg.path} has dimension {data.n}, expected {self.plant.n}")
        else:
            data = sample_measurements(self.plant, self.plant.state_box, cfg.size, cfg.noise_std,
                                       seed=cfg.seed, mode=cfg.sampling)
        write_dataset_csv(data, self.path('dataset.csv'))
        return data

    def learn(self) -> LearnResult:
        data = self.collect_dataset()
        kernel = self.config.kernel
        params = KernelParams(kernel.signal_std, kernel.lengthscales)
        log_evidence = None
        if kernel.fit:
            fit = optimize_hyperparams(data, params, budget=kernel.iterations, restarts=kernel.restarts,
                                       seed=self.config.dataset.seed, jitter=kernel.jitter)
            params, log_evidence = fit.params, fit.log_evidence
        else:
            logger.info("Using the configured kernel hyperparameters without fitting")
        model = fit_posterior(data, params, self.plant.state_box, kernel.jitter)
        sigma_bar = max_std(model, grid_per_dim=settings.GPREACH_MAX_STD_GRID)
        logger.info(f"Max posterior std over {self.plant.state_box}: {sigma_bar.tolist()}")
        report = {
            'fitted': kernel.fit,
            'sigma_bar': sigma_bar.tolist(),
            'log_evidence': None if log_evidence is None else log_evidence.tolist(),
        }
        artifacts.save_model(model, self.path(artifacts.MODEL_FILE), report)
        artifacts.write_metadata(self.run_dir, 'learn', seed=self.config.dataset.seed)
        return LearnResult(model, params, sigma_bar, log_evidence)

    def load_model(self):
        model_path = self.path(artifacts.MODEL_FILE)
        model = artifacts.load_model(model_path)
        sigma_bar = artifacts.model_report(model_path).get('sigma_bar')
        if sigma_bar is None:
            sigma_bar = max_std(model, grid_per_dim=settings.GPREACH_MAX_STD_GRID)
        return model, np.asarray(sigma_bar, dtype=float)

    # Bounds

    def rkhs_norms(self, model: GPModel) -> np.ndarray:
        cfg = self.config.bounds
        if cfg.rkhs_norm is not None:
            return np.asarray(cfg.rkhs_norm, dtype=float)
        if cfg.lipschitz is not None:
            lipschitz = np.asarray(cfg.lipschitz, dtype=float)
        else:
            estimate = np.array([estimate_lipschitz_sqrt(model.data, i) for i in range(model.n)])
            if np.any(estimate <= 0):
                raise ConfigError(
                    "The data gives a zero Lipschitz estimate; set [bounds] lipschitz explicitly"
                )
            lipschitz = cfg.lipschitz_safety * estimate
            logger.warning(
                f"Lipschitz constants {lipschitz.tolist()} are estimated from data "
                f"(safety factor {cfg.lipschitz_safety:g}); the resulting bound is not certified"
            )
        return rkhs_bounds(lipschitz, model.params).norm_bound

    def deterministic_bound(self, model: GPModel, sigma_bar) -> CalibrationResult:
        norms = self.rkhs_norms(model)
        beta = np.array([beta_deterministic(norms[i], model.data, model, i) for i in range(model.n)])
        envelope = beta * sigma_bar
        logger.info(f"Deterministic scales {beta.tolist()}, envelopes {envelope.tolist()}")
        bound = BoundSet('deterministic', beta, 1.0, None,
                         {'rkhs_norm': norms.tolist(), 'envelope': envelope.tolist()})
        return CalibrationResult(bound, rkhs_norm=norms)

    def probabilistic_bound(self, model: GPModel) -> CalibrationResult:
        cfg = self.config.bounds
        norms = self.rkhs_norms(model)
        gain = information_gain(model, self.plant.state_box, candidates=cfg.info_gain_candidates,
                                supplied=cfg.gamma)
        beta = np.array([beta_probabilistic(norms[i], gain.gamma[i], model.data.N, cfg.epsilon)
                         for i in range(model.n)])
        logger.info(f"Probabilistic scales {beta.tolist()} at epsilon={cfg.epsilon:g}")
        bound = BoundSet('probabilistic', beta, (1 - cfg.epsilon) ** model.n, cfg.epsilon,
                         {'rkhs_norm': norms.tolist(), 'gamma': gain.gamma.tolist(),
                          'gamma_method': gain.method})
        return CalibrationResult(bound, rkhs_norm=norms, gamma=gain.gamma)

    def coverage(self, model: GPModel) -> CoverageReport:
        cfg = self.config.bounds
        chunk_size = settings.GPREACH_MC_CHUNK_SIZE
        if not self.distribute:
            return monte_carlo_coverage(model, self.plant.drift, self.plant.state_box, cfg.envelope,
                                        cfg.trials, cfg.confidence, seed=cfg.seed,
                                        mode=cfg.envelope_mode, chunk_size=chunk_size)
        plan = chunk_plan(cfg.trials, chunk_size)
        logger.info(f"Dispatching {len(plan)} coverage chunks")
        results = [
            coverage_chunk.delay(str(self.path(artifacts.MODEL_FILE)), self.plant.name, list(cfg.envelope),
                                 cfg.envelope_mode, None, cfg.seed, index, len(plan), trials)
            for index, trials in enumerate(plan)
        ]
        hits = sum(result.get() for result in results)
        threshold = envelope_threshold(model, cfg.envelope, cfg.envelope_mode)
        return coverage_report(threshold, hits, cfg.trials, cfg.confidence, cfg.seed, cfg.envelope_mode)

    def monte_carlo_bound(self, model: GPModel, sigma_bar) -> CalibrationResult:
        report = self.coverage(model)
        pd.DataFrame([report.to_row()]).to_csv(self.path('coverage.csv'), index=False,
                                               float_format='%.17g')
        self.path('coverage.txt').write_text(f"{report}\n", encoding='utf-8')
        scale_from = sigma_bar if report.mode == 'constant' else None
        return CalibrationResult(report.to_bound_set(scale_from), coverage=report)

    def calibrate(self, method: Optional[str] = None) -> CalibrationResult:
        method = method or self.config.bounds.method
        model, sigma_bar = self.load_model()
        if method == 'deterministic':
            result = self.deterministic_bound(model, sigma_bar)
        elif method == 'probabilistic':
            result = self.probabilistic_bound(model)
        else:
            result = self.monte_carlo_bound(model, sigma_bar)
        artifacts.save_bounds(result.bound, self.path(artifacts.BOUNDS_FILE),
                              {'sigma_bar': sigma_bar.tolist()})
        artifacts.write_metadata(self.run_dir, 'calibrate', method=method, seed=self.config.bounds.seed)
        return result

    def sure_envelope(self, model: GPModel) -> np.ndarray:
        """Largest sampled error per dimension, the full-coverage constant envelope."""
        cfg = self.config.bounds
        return calibrate_envelope(model, self.plant.drift, self.plant.state_box, 1.0, cfg.trials,
                                  seed=cfg.seed)

    # Funnel

    def synthesize(self) -> FunnelSpec:
        cfg = self.config.funnel
        start, goal = cfg.start, cfg.goal
        spec = synthesize(start, goal, self.plant.state_box, cfg.decay, cfg.shrink, cfg.eta)
        artifacts.save_funnel(spec, self.path(artifacts.FUNNEL_FILE), start, goal, self.plant.state_box)
        times = np.linspace(0.0, self.config.sim.t_max, 1001)
        lower, upper = funnel_series(spec, times)
        columns = {'t': times}
        for i in range(spec.n):
            columns[f'lb_{i + 1}'] = lower[:, i]
            columns[f'ub_{i + 1}'] = upper[:, i]
        pd.DataFrame(columns).to_csv(self.path('funnel_bounds.csv'), index=False, float_format='%.17g')
        logger.info(f"Funnel settles inside the goal after t={settling_time(spec, goal):.4g}")
        artifacts.write_metadata(self.run_dir, 'synthesize')
        return spec

    # Simulation

    def start_states(self) -> np.ndarray:
        sim = self.config.sim
        if sim.grid > 0:
            return start_grid(self.config.funnel.start, sim.grid)
        return np.asarray([sim.x0], dtype=float)

    def simulate(self, overrides: Optional[dict] = None) -> SimulationResult:
        for name in (artifacts.MODEL_FILE, artifacts.BOUNDS_FILE, artifacts.FUNNEL_FILE):
            if not self.path(name).exists():
                raise ConfigError(f"Missing {self.path(name)}; run the earlier pipeline stages first")
        overrides = overrides or {}
        starts = self.start_states()
        if self.distribute:
            pending = [simulate_start.delay(str(self.run_dir), x0.tolist(), index, overrides)
                       for index, x0 in enumerate(starts)]
            summaries = [result.get() for result in pending]
        else:
            summaries = [simulate_start(str(self.run_dir), x0.tolist(), index, overrides)
                         for index, x0 in enumerate(starts)]

        frame = pd.DataFrame([{k: v for k, v in s.items() if k not in ('x0', 'failure')} for s in summaries])
        for j in range(starts.shape[1]):
            frame.insert(1 + j, f'x0_{j + 1}', starts[:, j])
        frame.to_csv(self.path('audit.csv'), index=False, float_format='%.17g')

        trajectories = [Trajectory.read_csv(self.path(trajectory_filename(s['index'])),
                                            reach_time=s['reach_time'], status=s['status'])
                        for s in summaries]
        spec = artifacts.load_funnel(self.path(artifacts.FUNNEL_FILE))
        start, goal, state_box = artifacts.load_funnel_boxes(self.path(artifacts.FUNNEL_FILE))
        if spec.n >= 2:
            render_state_space(trajectories, state_box, start, goal, self.path('state_space.svg'))
        render_funnel_bounds(trajectories, spec, self.path('funnel_bounds.svg'))
        result = SimulationResult(summaries, trajectories)
        artifacts.write_metadata(self.run_dir, 'simulate', runs=len(summaries),
                                 reach_fraction=result.reach_fraction)

        for summary in summaries:
            failure = summary['failure']
            if failure is None:
                continue
            if summary['status'] == 'blowup':
                raise NumericalBlowup(failure['step'], failure['time'])
            raise FunnelExit(failure['step'], failure['time'], failure['dim'], failure['boundary'])
        return result

    # End to end

    def _stage(self, name: str, stage, *args, **kwargs):
        try:
            return stage(*args, **kwargs)
        except GPReachError as e:
            e.args = (f"{name} stage failed: {e}",)
            raise

    def reproduce(self) -> pd.DataFrame:
        """Learn, calibrate, synthesize and simulate, then compare with reference values."""
        learned = self._stage('learn', self.learn)
        deterministic = self._stage('calibrate', self.deterministic_bound, learned.model, learned.sigma_bar)
        artifacts.save_bounds(deterministic.bound, self.path('bounds_deterministic.json'),
                              {'sigma_bar': learned.sigma_bar.tolist()})
        sure = self._stage('calibrate', self.sure_envelope, learned.model)
        calibrated = self._stage('calibrate', self.calibrate, 'monte_carlo')
        self._stage('synthesize', self.synthesize)
        if self.config.sim.grid == 0:
            self.config = replace(self.config, sim=replace(self.config.sim, grid=REPRODUCE_GRID))
        simulated = self._stage('simulate', self.simulate, {'stop_on_reach': True})

        produced = {
            'sigma_bar_max': float(learned.sigma_bar.max()),
            'coverage_p_lo': calibrated.coverage.interval[0],
            'coverage_p_hi': calibrated.coverage.interval[1],
            'reach_fraction': simulated.reach_fraction,
            'funnel_violations': float(simulated.violations),
        }
        for i in range(learned.model.n):
            produced[f'sigma_bar_{i + 1}'] = float(learned.sigma_bar[i])
            produced[f'beta_det_{i + 1}'] = float(deterministic.bound.scale[i])
            produced[f'envelope_det_{i + 1}'] = float(deterministic.bound.scale[i] * learned.sigma_bar[i])
            produced[f'envelope_sure_{i + 1}'] = float(sure[i])
        summary = summary_frame(produced)
        summary.to_csv(self.path('summary.csv'), index=False, float_format='%.6g')
        artifacts.write_metadata(self.run_dir, 'reproduce_case_study', seed=self.config.dataset.seed)
        return summary


def summary_frame(produced: Dict[str, float]) -> pd.DataFrame:
    """Rows metric, produced, paper, deviation; deviation is relative when the reference is nonzero."""
    rows = []
    for metric, value in produced.items():
        reference = REFERENCE_VALUES.get(metric)
        if reference is None:
            deviation = None
        elif reference != 0:
            deviation = value / reference - 1.0
        else:
            deviation = value - reference
        rows.append({'metric': metric, 'produced': value, 'paper': reference, 'deviation': deviation})
    order = {name: k for k, name in enumerate(REFERENCE_VALUES)}
    rows.sort(key=lambda row: order.get(row['metric'], len(order)))
    return pd.DataFrame(rows, columns=['metric', 'produced', 'paper', 'deviation'])
