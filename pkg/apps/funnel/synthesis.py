"""
Exponential funnels and their synthesis from start, goal and state boxes.

Each dimension is kept inside
    eta_i - c_i rho_i(t) < x_i(t) < eta_i + d_i rho_i(t),
    rho_i(t) = rho0_i exp(-eps_i t) + rhoinf_i.
At t = 0 the funnel covers the start box; as t grows it shrinks into the goal box.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import logging

import numpy as np

from apps.common.boxes import StateBox, as_vector
from apps.common.exceptions import DegenerateDim, DomainError, InfeasibleGoal

logger = logging.getLogger(__name__)

# Share of the goal width kept clear between eta and the goal boundary.
ETA_MARGIN = 0.01
# Inward shift (share of the start width) for eta sitting on a start boundary.
ETA_NUDGE = 1e-3


@dataclass(frozen=True, eq=False)
class FunnelSpec:
    eta: np.ndarray
    rho0: np.ndarray
    rho_inf: np.ndarray
    eps: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        fields = {}
        for name in ('eta', 'rho0', 'rho_inf', 'eps', 'c', 'd'):
            fields[name] = as_vector(getattr(self, name), name)
        sizes = {v.size for v in fields.values()}
        if len(sizes) != 1:
            raise DomainError(f"Funnel parameters differ in dimension: {sorted(sizes)}")
        for name in ('rho0', 'rho_inf', 'eps'):
            if np.any(fields[name] <= 0):
                raise DomainError(f"{name} must be > 0, got {fields[name].tolist()}")
        if np.any(fields['c'] < 0) or np.any(fields['d'] < 0):
            raise DomainError("c and d must be >= 0")
        if np.any(fields['c'] + fields['d'] <= 0):
            raise DomainError("c_i + d_i must be > 0 in every dimension")
        for name, value in fields.items():
            object.__setattr__(self, name, value)

    def __eq__(self, other):
        if not isinstance(other, FunnelSpec):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ('eta', 'rho0', 'rho_inf', 'eps', 'c', 'd'))

    __hash__ = None

    def __str__(self):
        return (f"FunnelSpec(eta={self.eta.tolist()}, rho0={self.rho0.tolist()}, "
                f"rho_inf={self.rho_inf.tolist()}, eps={self.eps.tolist()}, "
                f"c={self.c.tolist()}, d={self.d.tolist()})")

    @property
    def n(self) -> int:
        return self.eta.size

    @property
    def eps_bar(self) -> float:
        return float(self.eps.max())

    def rho(self, t: float) -> np.ndarray:
        return self.rho0 * np.exp(-self.eps * t) + self.rho_inf

    def rho_dot(self, t: float) -> np.ndarray:
        return -self.eps * self.rho0 * np.exp(-self.eps * t)

    def bounds(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        r = self.rho(t)
        return self.eta - self.c * r, self.eta + self.d * r

    def terminal_box(self) -> StateBox:
        return StateBox(self.eta - self.c * self.rho_inf, self.eta + self.d * self.rho_inf)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ('eta', 'rho0', 'rho_inf', 'eps', 'c', 'd')}

    @classmethod
    def from_dict(cls, data: dict) -> 'FunnelSpec':
        return cls(**{k: data[k] for k in ('eta', 'rho0', 'rho_inf', 'eps', 'c', 'd')})


def rho(spec: FunnelSpec, i: int, t: float) -> float:
    """rho_i(t) = rho0_i exp(-eps_i t) + rhoinf_i."""
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    return float(spec.rho0[i] * np.exp(-spec.eps[i] * t) + spec.rho_inf[i])


def funnel_interval(spec: FunnelSpec, i: int, t: float) -> Tuple[float, float]:
    """Open interval (eta_i - c_i rho_i(t), eta_i + d_i rho_i(t))."""
    r = rho(spec, i, t)
    return float(spec.eta[i] - spec.c[i] * r), float(spec.eta[i] + spec.d[i] * r)


def funnel_series(spec: FunnelSpec, times) -> Tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds of every dimension at each time, shape (T, n)."""
    times = np.asarray(times, dtype=float).reshape(-1, 1)
    if np.any(times < 0):
        raise DomainError("Funnel times must be >= 0")
    r = spec.rho0 * np.exp(-spec.eps * times) + spec.rho_inf
    return spec.eta - spec.c * r, spec.eta + spec.d * r


def settling_time(spec: FunnelSpec, goal: StateBox) -> float:
    """Earliest t after which the closed funnel stays inside goal; inf if never."""
    with np.errstate(divide='ignore'):
        below = np.where(spec.c > 0, (spec.eta - goal.lower) / spec.c, np.inf)
        above = np.where(spec.d > 0, (goal.upper - spec.eta) / spec.d, np.inf)
    limits = np.minimum(below, above)
    if np.any(limits < spec.rho_inf):
        return float('inf')
    times = np.log(spec.rho0 / np.maximum(limits - spec.rho_inf, 1e-300)) / spec.eps
    return float(max(0.0, times.max()))


def _interior_range(goal: StateBox, i: int) -> Tuple[float, float]:
    margin = ETA_MARGIN * goal.width[i]
    return goal.lower[i] + margin, goal.upper[i] - margin


def _pick_eta(start: StateBox, goal: StateBox, i: int) -> Tuple[float, bool]:
    """Midpoint policy; returns eta_i and whether the overlap branch applies."""
    inner_lo, inner_hi = _interior_range(goal, i)
    overlap_lo = max(start.lower[i], goal.lower[i])
    overlap_hi = min(start.upper[i], goal.upper[i])
    if overlap_lo <= overlap_hi:
        lo, hi = max(overlap_lo, inner_lo), min(overlap_hi, inner_hi)
        if lo <= hi:
            return 0.5 * (lo + hi), True
        logger.warning(
            f"Dimension {i + 1}: start/goal overlap [{overlap_lo:g}, {overlap_hi:g}] has no "
            f"point inside the goal interior; using the hull construction"
        )
    return 0.5 * (inner_lo + inner_hi), False


def _check_eta(start: StateBox, goal: StateBox, i: int, eta: float) -> bool:
    if not goal.lower[i] < eta < goal.upper[i]:
        raise InfeasibleGoal(
            f"eta_{i + 1}={eta:g} is not inside the goal interior "
            f"({goal.lower[i]:g}, {goal.upper[i]:g})", dim=i
        )
    overlap_lo = max(start.lower[i], goal.lower[i])
    overlap_hi = min(start.upper[i], goal.upper[i])
    if overlap_lo <= overlap_hi and not overlap_lo <= eta <= overlap_hi:
        logger.warning(f"Dimension {i + 1}: eta_{i + 1}={eta:g} lies outside the start/goal overlap")
        return False
    return overlap_lo <= overlap_hi


def _side_distances(start: StateBox, goal: StateBox, i: int, eta: float, overlap: bool):
    if overlap:
        low, high = start.lower[i], start.upper[i]
    else:
        low = min(start.lower[i], goal.lower[i])
        high = max(start.upper[i], goal.upper[i])
    return abs(eta - low), abs(eta - high)


def synthesize(start: StateBox, goal: StateBox, state_box: StateBox, eps,
               shrink: float = 0.5, eta: Optional[Sequence[float]] = None) -> FunnelSpec:
    """Construct a funnel that starts around `start` and settles inside `goal`.

    Per dimension the start/goal overlap decides the construction: with an
    overlap, eta is taken in it and rho0 is the larger distance from eta to the
    start ends; otherwise eta is inside the goal and distances are measured to
    the ends of the start/goal hull. c_i and d_i are those distances over rho0.
    rhoinf_i is `shrink` times the largest value keeping the terminal box inside
    the goal.
    """
    n = state_box.n
    if start.n != n or goal.n != n:
        raise DomainError("Start, goal and state boxes must share a dimension")
    if not start.is_subset_of(state_box) or not goal.is_subset_of(state_box):
        raise InfeasibleGoal(f"Start {start} and goal {goal} must lie inside the state box {state_box}")
    if not goal.has_interior:
        raise InfeasibleGoal(f"Goal box {goal} has an empty interior")
    eps = np.broadcast_to(as_vector(eps, 'eps'), (n,)).astype(float)
    if np.any(eps <= 0):
        raise DomainError(f"Decay rates must be > 0, got {eps.tolist()}")
    if not 0.0 < shrink <= 1.0:
        raise DomainError(f"shrink must lie in (0, 1], got {shrink}")
    if eta is not None:
        eta = as_vector(eta, 'eta')
        if eta.size != n:
            raise DomainError(f"eta must have {n} entries, got {eta.size}")

    etas, rho0, rho_inf, c, d = (np.empty(n) for _ in range(5))
    for i in range(n):
        if eta is None:
            eta_i, overlap = _pick_eta(start, goal, i)
        else:
            eta_i = float(eta[i])
            overlap = _check_eta(start, goal, i, eta_i)
        below, above = _side_distances(start, goal, i, eta_i, overlap)
        if max(below, above) == 0:
            raise DegenerateDim(
                f"Dimension {i + 1}: start and goal collapse onto eta_{i + 1}={eta_i:g}", dim=i
            )
        if min(below, above) == 0:
            shift = ETA_NUDGE * start.width[i]
            eta_i = eta_i + shift if below == 0 else eta_i - shift
            if not goal.lower[i] < eta_i < goal.upper[i]:
                raise InfeasibleGoal(f"Dimension {i + 1}: cannot move eta off the start boundary", dim=i)
            logger.warning(f"Dimension {i + 1}: eta moved to {eta_i:g} off the start boundary")
            below, above = _side_distances(start, goal, i, eta_i, overlap)
        etas[i] = eta_i
        rho0[i] = max(below, above)
        c[i], d[i] = below / rho0[i], above / rho0[i]
        clearance = min(eta_i - goal.lower[i], goal.upper[i] - eta_i)
        rho_inf[i] = shrink * clearance / max(c[i], d[i])

    spec = FunnelSpec(etas, rho0, rho_inf, eps, c, d)
    if not spec.terminal_box().is_subset_of(goal):
        raise InfeasibleGoal(f"Terminal funnel box {spec.terminal_box()} leaves the goal {goal}")
    logger.info(f"Synthesized {spec}")
    return spec
