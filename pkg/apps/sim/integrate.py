"""
Fixed-step integration of the closed loop x' = f(x) + g(x) u(x, t).

The control law is re-evaluated at every stage state, so RK4 runs on the
closed-loop vector field. Grid times are k * dt.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional
import logging

import numpy as np
import pandas as pd

from apps.common.boxes import StateBox
from apps.common.exceptions import (
    ConfigError, DomainError, FunnelExit, NumericalBlowup, OutsideFunnel,
)
from apps.controller.law import ControlLaw, evaluate

logger = logging.getLogger(__name__)

INTEGRATORS = ('rk4', 'euler')


def rk4_step(fun: Callable, t: float, y: np.ndarray, h: float, k1=None) -> np.ndarray:
    if k1 is None:
        k1 = fun(t, y)
    k2 = fun(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = fun(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = fun(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def euler_step(fun: Callable, t: float, y: np.ndarray, h: float, k1=None) -> np.ndarray:
    return y + h * (fun(t, y) if k1 is None else k1)


STEPPERS = {'rk4': rk4_step, 'euler': euler_step}


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_max: float = 10.0
    integrator: str = 'rk4'
    stop_on_reach: bool = False

    def __post_init__(self):
        if not 0 < self.dt <= self.t_max:
            raise ConfigError(f"Need 0 < dt <= t_max, got dt={self.dt}, t_max={self.t_max}")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"Unknown integrator {self.integrator!r}; expected one of {INTEGRATORS}")

    @property
    def steps(self) -> int:
        return int(round(self.t_max / self.dt))

    def with_overrides(self, **overrides) -> 'SimConfig':
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


@dataclass(eq=False)
class Trajectory:
    """Closed-loop samples on the time grid; diagnostics are aligned with times."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    xi: np.ndarray
    lyapunov: np.ndarray
    decrement: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    contained: np.ndarray
    reach_time: Optional[float] = None
    status: str = 'completed'
    x0: np.ndarray = field(default=None)

    def __str__(self):
        reach = 'never' if self.reach_time is None else f"t={self.reach_time:.4g}"
        return f"Trajectory({len(self)} steps, {self.status}, reached {reach})"

    def __len__(self):
        return self.times.size

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_frame(self) -> pd.DataFrame:
        columns = {'t': self.times}
        for j in range(self.n):
            columns[f'x_{j + 1}'] = self.states[:, j]
        for j in range(self.inputs.shape[1]):
            columns[f'u_{j + 1}'] = self.inputs[:, j]
        for j in range(self.n):
            columns[f'xi_{j + 1}'] = self.xi[:, j]
        columns['V'] = self.lyapunov
        columns['dV_bound'] = self.decrement
        for j in range(self.n):
            columns[f'lb_{j + 1}'] = self.lower[:, j]
            columns[f'ub_{j + 1}'] = self.upper[:, j]
        columns['in_envelope'] = self.contained
        return pd.DataFrame(columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, reach_time: Optional[float] = None,
                   status: str = 'completed') -> 'Trajectory':
        def block(prefix):
            names = sorted((c for c in frame.columns if c.startswith(prefix)),
                           key=lambda c: int(c[len(prefix):]))
            return frame[names].to_numpy(dtype=float)

        try:
            return cls(
                times=frame['t'].to_numpy(dtype=float),
                states=block('x_'),
                inputs=block('u_'),
                xi=block('xi_'),
                lyapunov=frame['V'].to_numpy(dtype=float),
                decrement=frame['dV_bound'].to_numpy(dtype=float),
                lower=block('lb_'),
                upper=block('ub_'),
                contained=frame['in_envelope'].to_numpy(dtype=bool),
                reach_time=reach_time,
                status=status,
            )
        except KeyError as e:
            raise ConfigError(f"Trajectory table is missing column {e}") from e

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        return path

    @classmethod
    def read_csv(cls, path, **kwargs) -> 'Trajectory':
        try:
            frame = pd.read_csv(path)
        except FileNotFoundError:
            raise ConfigError(f"Trajectory file not found: {path}")
        except pd.errors.EmptyDataError as e:
            raise ConfigError(f"Trajectory file {path} is empty") from e
        return cls.from_frame(frame, **kwargs)


class _Recorder:
    def __init__(self, law: ControlLaw, plant, x0: np.ndarray):
        self.law = law
        self.plant = plant
        self.x0 = x0
        self.rows = []

    def record(self, t: float, x: np.ndarray, result):
        error = result.error
        lower, upper = self.law.spec.bounds(t)
        truth = np.asarray(self.plant.f(x), dtype=float)
        width = self.law.bound.scale * result.std
        self.rows.append((t, x.copy(), result.u, error.xi, 0.5 * float(error.xi @ error.xi),
                          -float(error.xi @ (error.phi * error.xi)), lower, upper,
                          bool(np.all(np.abs(truth - result.mean) <= width))))

    def trajectory(self, reach_time=None, status='completed') -> Trajectory:
        if not self.rows:
            n = self.x0.size
            empty = np.empty((0, n))
            return Trajectory(np.empty(0), empty, empty, empty, np.empty(0), np.empty(0),
                              empty, empty, np.empty(0, dtype=bool), reach_time, status, self.x0)
        columns = list(zip(*self.rows))
        return Trajectory(
            times=np.array(columns[0]),
            states=np.array(columns[1]),
            inputs=np.array(columns[2]),
            xi=np.array(columns[3]),
            lyapunov=np.array(columns[4]),
            decrement=np.array(columns[5]),
            lower=np.array(columns[6]),
            upper=np.array(columns[7]),
            contained=np.array(columns[8], dtype=bool),
            reach_time=reach_time,
            status=status,
            x0=self.x0,
        )


def integrate(plant, law: ControlLaw, x0, cfg: SimConfig,
              goal: Optional[StateBox] = None) -> Trajectory:
    """Simulate the closed loop from x0 over [0, t_max] on the grid k * dt.

    Raises FunnelExit when a grid or stage state leaves the funnel and
    NumericalBlowup on a non-finite state; both carry the partial trajectory.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    if x.size != plant.n:
        raise DomainError(f"x0 must have {plant.n} entries, got {x.size}")
    step = STEPPERS[cfg.integrator]
    recorder = _Recorder(law, plant, x.copy())
    reach_time = None

    def closed_loop(t, state):
        return plant.f(state) + plant.g(state) @ evaluate(law, state, t).u

    for k in range(cfg.steps + 1):
        t = k * cfg.dt
        if not np.all(np.isfinite(x)):
            logger.error(f"Non-finite state at step {k} (t={t:.6g})")
            raise NumericalBlowup(k, t, recorder.trajectory(reach_time, 'blowup'))
        try:
            result = evaluate(law, x, t)
        except OutsideFunnel as e:
            logger.error(f"State {x.tolist()} left the funnel at step {k} (t={t:.6g}), dimension {e.dim + 1}")
            raise FunnelExit(k, t, e.dim, e.boundary, recorder.trajectory(reach_time, 'funnel_exit')) from e
        recorder.record(t, x, result)
        if reach_time is None and goal is not None and goal.contains(x):
            reach_time = t
            logger.info(f"Reached goal at t={t:.6g}")
            if cfg.stop_on_reach:
                return recorder.trajectory(reach_time, 'reached')
        if k == cfg.steps:
            break
        try:
            x = step(closed_loop, t, x, cfg.dt, plant.f(x) + plant.g(x) @ result.u)
        except OutsideFunnel as e:
            t_next = (k + 1) * cfg.dt
            logger.error(f"Stage state left the funnel during step {k + 1} (t={t_next:.6g}), "
                         f"dimension {e.dim + 1}")
            raise FunnelExit(k + 1, t_next, e.dim, e.boundary,
                             recorder.trajectory(reach_time, 'funnel_exit')) from e
    return recorder.trajectory(reach_time, 'completed')
