"""
True plants x' = f(x) + g(x) u and noisy measurement collection.

Drift functions accept one state (n,) or a batch (M, n) and return the same
shape. The controller never sees f; it is used to simulate, to collect data
and to check envelopes.
"""

from dataclasses import dataclass
from typing import Callable, Dict
import logging

import numpy as np

from apps.common.boxes import StateBox
from apps.common.exceptions import ConfigError, DomainError
from apps.gp.data import Dataset
from .integrate import rk4_step

logger = logging.getLogger(__name__)

SAMPLING_MODES = ('uniform', 'trajectory')


@dataclass(frozen=True, eq=False)
class Plant:
    name: str
    drift: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]
    state_box: StateBox
    n_inputs: int

    def __str__(self):
        return f"Plant({self.name}, X={self.state_box})"

    @property
    def n(self) -> int:
        return self.state_box.n

    def f(self, x) -> np.ndarray:
        return self.drift(np.asarray(x, dtype=float))

    def g(self, x) -> np.ndarray:
        return self.input_map(np.asarray(x, dtype=float))


def shifted_sigmoid(z):
    return 1.0 / (1.0 + np.exp(-2.0 * z)) - 0.5


def _case_study_drift(x: np.ndarray) -> np.ndarray:
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x1 + (np.cos(x1) - 1.0) * x2, -shifted_sigmoid(x1) + x2], axis=-1)


def _identity(x: np.ndarray) -> np.ndarray:
    return np.eye(x.shape[-1])


def case_study_plant() -> Plant:
    """Two-state plant with g = I on [-5, 5]^2."""
    return Plant('case_study', _case_study_drift, _identity, StateBox.cube(-5, 5, 2), 2)


def integrator_plant(n: int = 2) -> Plant:
    """Pure integrator x' = u on [-5, 5]^n."""
    return Plant('integrator', np.zeros_like, _identity, StateBox.cube(-5, 5, n), n)


PLANTS: Dict[str, Callable[[], Plant]] = {
    'case_study': case_study_plant,
    'integrator': integrator_plant,
}


def get_plant(name: str) -> Plant:
    try:
        return PLANTS[name]()
    except KeyError:
        raise ConfigError(f"Unknown plant {name!r}; available: {', '.join(sorted(PLANTS))}")


def _open_loop_states(plant: Plant, box: StateBox, rng: np.random.Generator, N: int,
                      sample_dt: float, per_start: int, substeps: int = 10) -> np.ndarray:
    """States along u = 0 runs from uniform starts, kept while they stay in box."""
    def field(t, x):
        return plant.f(x)

    states = []
    h = sample_dt / substeps
    while len(states) < N:
        x = box.sample_uniform(rng, 1)[0]
        for _ in range(per_start):
            if not box.contains(x) or len(states) == N:
                break
            states.append(x.copy())
            for _ in range(substeps):
                x = rk4_step(field, 0.0, x, h)
            if not np.all(np.isfinite(x)):
                break
    return np.array(states)


def sample_measurements(plant: Plant, box: StateBox, N: int, sigma_f: float, seed=0,
                        mode: str = 'uniform', sample_dt: float = 0.05,
                        per_start: int = 10) -> Dataset:
    """N noisy drift measurements y = f(x) + w with w ~ N(0, sigma_f^2 I)."""
    if N < 1:
        raise DomainError(f"N must be >= 1, got {N}")
    if sigma_f < 0:
        raise DomainError(f"sigma_f must be >= 0, got {sigma_f}")
    if mode not in SAMPLING_MODES:
        raise ConfigError(f"Unknown sampling mode {mode!r}; expected one of {SAMPLING_MODES}")
    box.require_interior('sampling box')
    rng = np.random.default_rng(seed)
    if mode == 'uniform':
        inputs = box.sample_uniform(rng, N)
    else:
        inputs = _open_loop_states(plant, box, rng, N, sample_dt, per_start)
    noise = sigma_f * rng.standard_normal(inputs.shape) if sigma_f > 0 else 0.0
    data = Dataset(inputs, plant.f(inputs) + noise, sigma_f)
    logger.info(f"Collected {data} from {plant.name} ({mode} sampling, seed={seed})")
    return data
