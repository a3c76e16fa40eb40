"""
Information gain gamma_i over-approximated by greedy log-det maximization.

For a set S of inputs, the information carried by noisy observations of f_i
on S is 0.5 * log det(I + sigma_f^-2 K_S). Greedy selection attains at least
(1 - 1/e) of the best value, so dividing by that factor over-approximates the
maximum.
"""

from dataclasses import dataclass
from typing import Optional, Sequence
import logging
import math

import numpy as np

from apps.common.boxes import StateBox
from apps.common.exceptions import DomainError
from apps.gp.kernels import kernel_matrix
from apps.gp.regression import GPModel

logger = logging.getLogger(__name__)

GREEDY_FACTOR = 1.0 - math.exp(-1.0)
INFO_GAIN_METHODS = ('greedy_overapprox', 'user_supplied')


@dataclass(frozen=True)
class GreedyGain:
    raw: float
    gamma: float
    selected: np.ndarray


@dataclass(frozen=True, eq=False)
class InfoGain:
    gamma: np.ndarray
    method: str

    def __post_init__(self):
        if self.method not in INFO_GAIN_METHODS:
            raise DomainError(f"Unknown information gain method {self.method!r}")
        gamma = np.array(self.gamma, dtype=float).reshape(-1)
        if np.any(~np.isfinite(gamma)) or np.any(gamma < 0):
            raise DomainError(f"information gain must be finite and >= 0, got {gamma.tolist()}")
        object.__setattr__(self, 'gamma', gamma)


def candidate_grid(box: StateBox, candidates: int) -> np.ndarray:
    """Uniform grid over box with at least `candidates` points."""
    if candidates < 1:
        raise DomainError(f"candidates must be >= 1, got {candidates}")
    per_dim = max(2, math.ceil(candidates ** (1.0 / box.n) - 1e-9))
    return box.grid(per_dim)


def info_gain_greedy(model: GPModel, box: StateBox, budget: int, i: int,
                     candidates: int = 500) -> GreedyGain:
    """Greedily pick `budget` candidates maximizing the log-det gain for dimension i.

    The candidate posterior covariance is downdated by one rank per pick; each
    pick adds 0.5 * log(1 + var / sigma_f^2) for the current best variance.
    Candidates may be picked more than once.
    """
    if budget < 1:
        raise DomainError(f"budget must be >= 1, got {budget}")
    noise_var = model.noise_std ** 2
    if noise_var <= 0:
        raise DomainError("Information gain is unbounded for noise_std = 0")
    points = candidate_grid(box, candidates)
    cov = kernel_matrix(model.params, i, points, points)
    raw = 0.0
    selected = np.empty(budget, dtype=int)
    for step in range(budget):
        var = np.maximum(np.diag(cov), 0.0)
        best = int(np.argmax(var))
        selected[step] = best
        raw += 0.5 * np.log1p(var[best] / noise_var)
        column = cov[:, best].copy()
        cov -= np.outer(column, column) / (var[best] + noise_var)
    gamma = raw / GREEDY_FACTOR
    logger.debug(f"Dimension {i + 1}: greedy log-det {raw:.6g} over {points.shape[0]} candidates")
    return GreedyGain(float(raw), float(gamma), selected)


def information_gain(model: GPModel, box: StateBox, budget: Optional[int] = None,
                     candidates: int = 500, supplied: Optional[Sequence[float]] = None) -> InfoGain:
    """gamma for every dimension; `supplied` values bypass the greedy search."""
    if supplied is not None:
        supplied = np.asarray(supplied, dtype=float).reshape(-1)
        if supplied.size != model.n:
            raise DomainError(f"Expected {model.n} information gain values, got {supplied.size}")
        return InfoGain(supplied, 'user_supplied')
    budget = model.data.N if budget is None else budget
    gamma = [info_gain_greedy(model, box, budget, i, candidates).gamma for i in range(model.n)]
    logger.info(f"Greedy information gain over {budget} picks: gamma={np.round(gamma, 6).tolist()}")
    return InfoGain(np.array(gamma), 'greedy_overapprox')
