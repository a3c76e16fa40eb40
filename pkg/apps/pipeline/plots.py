"""
Vector-graphics figures rendered through Django templates.

state_space.svg shows the state, start and goal boxes with every trajectory;
funnel_bounds.svg has one panel per dimension with x_i(t) between the funnel
bounds.
"""

from pathlib import Path
from typing import Sequence
import logging

import numpy as np
from django.template.loader import render_to_string

from apps.common.boxes import StateBox
from apps.funnel.synthesis import FunnelSpec, funnel_series
from apps.sim.integrate import Trajectory

logger = logging.getLogger(__name__)

MAX_POINTS = 1500
PALETTE = ('#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f')


def _decimate(size: int, limit: int = MAX_POINTS) -> np.ndarray:
    if size <= limit:
        return np.arange(size)
    return np.unique(np.linspace(0, size - 1, limit).round().astype(int))


class _Axis:
    """Affine map from data values onto a pixel range."""

    def __init__(self, lo: float, hi: float, pixel_lo: float, pixel_hi: float):
        span = hi - lo if hi > lo else 1.0
        self.lo, self.scale, self.pixel_lo = lo, (pixel_hi - pixel_lo) / span, pixel_lo

    def __call__(self, values):
        return self.pixel_lo + (np.asarray(values, dtype=float) - self.lo) * self.scale


def _points(xs, ys) -> str:
    return ' '.join(f'{x:.2f},{y:.2f}' for x, y in zip(xs, ys))


def render_state_space(trajectories: Sequence[Trajectory], state_box: StateBox, start: StateBox,
                       goal: StateBox, path, dims=(0, 1), size: int = 480, margin: int = 40) -> Path:
    i, j = dims
    x_axis = _Axis(state_box.lower[i], state_box.upper[i], margin, size - margin)
    y_axis = _Axis(state_box.lower[j], state_box.upper[j], size - margin, margin)

    def rect(box, label, fill):
        x0, x1 = x_axis([box.lower[i], box.upper[i]])
        y0, y1 = y_axis([box.upper[j], box.lower[j]])
        return {'x': f'{x0:.2f}', 'y': f'{y0:.2f}', 'width': f'{x1 - x0:.2f}',
                'height': f'{y1 - y0:.2f}', 'label': label, 'fill': fill}

    lines = []
    for k, traj in enumerate(trajectories):
        if len(traj) == 0:
            continue
        keep = _decimate(len(traj))
        lines.append({'points': _points(x_axis(traj.states[keep, i]), y_axis(traj.states[keep, j])),
                      'color': PALETTE[k % len(PALETTE)]})
    context = {
        'width': size,
        'height': size,
        'margin': margin,
        'boxes': [rect(start, 'X_a', '#1f77b4'), rect(goal, 'X_b', '#2ca02c')],
        'frame': rect(state_box, 'X', 'none'),
        'lines': lines,
        'x_label': f'x_{i + 1}',
        'y_label': f'x_{j + 1}',
        'ticks': _ticks(state_box, i, j, x_axis, y_axis, size, margin),
    }
    path = Path(path)
    path.write_text(render_to_string('pipeline/state_space.svg', context), encoding='utf-8')
    logger.info(f"Wrote {path}")
    return path


def _ticks(state_box, i, j, x_axis, y_axis, size, margin):
    ticks = []
    for value in np.linspace(state_box.lower[i], state_box.upper[i], 5):
        ticks.append({'x': f'{x_axis(value):.2f}', 'y': f'{size - margin + 15:.2f}', 'text': f'{value:g}'})
    for value in np.linspace(state_box.lower[j], state_box.upper[j], 5):
        ticks.append({'x': f'{margin - 5:.2f}', 'y': f'{y_axis(value) + 4:.2f}', 'text': f'{value:g}',
                      'anchor': 'end'})
    return ticks


def render_funnel_bounds(trajectories: Sequence[Trajectory], spec: FunnelSpec, path,
                         width: int = 640, panel_height: int = 220, margin: int = 40) -> Path:
    t_end = max((traj.times[-1] for traj in trajectories if len(traj)), default=1.0) or 1.0
    grid = np.linspace(0.0, t_end, 400)
    lower, upper = funnel_series(spec, grid)
    panels = []
    for i in range(spec.n):
        top = i * panel_height
        values = [lower[:, i], upper[:, i]] + [traj.states[:, i] for traj in trajectories if len(traj)]
        lo = min(float(np.min(v)) for v in values)
        hi = max(float(np.max(v)) for v in values)
        t_axis = _Axis(0.0, t_end, margin, width - margin)
        v_axis = _Axis(lo, hi, top + panel_height - margin / 2, top + margin / 2)
        lines = []
        for k, traj in enumerate(trajectories):
            if len(traj) == 0:
                continue
            keep = _decimate(len(traj))
            lines.append({'points': _points(t_axis(traj.times[keep]), v_axis(traj.states[keep, i])),
                          'color': PALETTE[k % len(PALETTE)]})
        panels.append({
            'label': f'x_{i + 1}',
            'top': top,
            'label_y': f'{top + margin / 2 - 6:.2f}',
            'lower': _points(t_axis(grid), v_axis(lower[:, i])),
            'upper': _points(t_axis(grid), v_axis(upper[:, i])),
            'lines': lines,
            'range': f'[{lo:.3g}, {hi:.3g}]',
        })
    context = {'width': width, 'height': panel_height * spec.n, 'margin': margin,
               'panels': panels, 't_end': f'{t_end:g}'}
    path = Path(path)
    path.write_text(render_to_string('pipeline/funnel_bounds.svg', context), encoding='utf-8')
    logger.info(f"Wrote {path}")
    return path
