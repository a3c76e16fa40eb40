"""
Post-run checks on trajectories: goal reach, funnel margins and start grids.
"""

from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np

from apps.common.boxes import StateBox
from apps.common.exceptions import DomainError
from apps.funnel.synthesis import FunnelSpec, funnel_series
from .integrate import Trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FunnelAudit:
    margins: np.ndarray
    min_margin: float
    violations: np.ndarray

    def __str__(self):
        return f"min funnel margin {self.min_margin:.6g}, {self.violations.size} violating steps"

    @property
    def ok(self) -> bool:
        return self.violations.size == 0


def reach_check(traj: Trajectory, goal: StateBox) -> Optional[float]:
    """First grid time with the state inside goal, or None."""
    inside = np.flatnonzero(goal.contains(traj.states))
    if inside.size == 0:
        return None
    return float(traj.times[inside[0]])


def funnel_audit(traj: Trajectory, spec: FunnelSpec) -> FunnelAudit:
    """Per-step distance of every component to the nearer funnel bound."""
    if len(traj) == 0:
        return FunnelAudit(np.empty((0, spec.n)), float('inf'), np.empty(0, dtype=int))
    lower, upper = funnel_series(spec, traj.times)
    margins = np.minimum(upper - traj.states, traj.states - lower)
    violations = np.flatnonzero(np.any(margins <= 0, axis=1))
    audit = FunnelAudit(margins, float(margins.min()), violations)
    if violations.size:
        logger.warning(f"Funnel audit: {audit}, first at t={traj.times[violations[0]]:.6g}")
    return audit


def start_grid(box: StateBox, points_per_dim: int) -> np.ndarray:
    """points_per_dim**n states spread over box, corners included."""
    if points_per_dim < 1:
        raise DomainError(f"points_per_dim must be >= 1, got {points_per_dim}")
    if points_per_dim == 1:
        return box.center.reshape(1, -1)
    return box.grid(points_per_dim)
