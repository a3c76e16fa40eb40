"""
Celery tasks for the sim app.
"""

from pathlib import Path
from celery import shared_task
import logging

import numpy as np

from apps.common.exceptions import FunnelExit, NumericalBlowup
from apps.controller.law import ControlLaw
from apps.pipeline.artifacts import (
    BOUNDS_FILE, CONFIG_FILE, FUNNEL_FILE, MODEL_FILE, load_bounds, load_funnel, load_model,
)
from apps.pipeline.config import RunConfig
from .audit import funnel_audit
from .integrate import SimConfig, integrate
from .plants import get_plant

logger = logging.getLogger(__name__)


def trajectory_filename(index: int) -> str:
    return f'trajectory_{index:02d}.csv'


@shared_task
def simulate_start(run_dir: str, x0, index: int, overrides: dict = None) -> dict:
    """Run the closed loop from one start state and write its trajectory CSV."""
    try:
        run_dir = Path(run_dir)
        config = RunConfig.load(run_dir / CONFIG_FILE)
        plant = get_plant(config.plant.name)
        spec = load_funnel(run_dir / FUNNEL_FILE)
        law = ControlLaw(load_model(run_dir / MODEL_FILE), load_bounds(run_dir / BOUNDS_FILE),
                         spec, plant.input_map, config.sim.smoothing)
        cfg = SimConfig(config.sim.dt, config.sim.t_max, config.sim.integrator,
                        config.sim.stop_on_reach).with_overrides(**(overrides or {}))
        failure = None
        try:
            trajectory = integrate(plant, law, x0, cfg, goal=config.funnel.goal)
        except (FunnelExit, NumericalBlowup) as e:
            trajectory = e.trajectory
            failure = {'message': str(e), 'step': e.step, 'time': e.time,
                       'dim': getattr(e, 'dim', None), 'boundary': getattr(e, 'boundary', None)}

        trajectory.write_csv(run_dir / trajectory_filename(index))
        audit = funnel_audit(trajectory, spec)
        summary = {
            'index': index,
            'x0': [float(v) for v in np.asarray(x0, dtype=float)],
            'status': trajectory.status,
            'reach_time': trajectory.reach_time,
            'steps': len(trajectory),
            'min_margin': audit.min_margin,
            'violations': int(audit.violations.size),
            'failure': failure,
        }
        logger.info(f"Start {index} from {summary['x0']}: {trajectory}")
        return summary

    except Exception as e:
        logger.error(f"Failed to simulate start {index}: {e}")
        raise
