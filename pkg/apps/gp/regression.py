"""
Independent per-dimension GP posteriors over the drift f.

For output dimension i, with A_i = K_i + sigma_f^2 I_N:
    mu_i(x)      = kbar_i(x)^T A_i^{-1} y_i
    sigma_i^2(x) = k_i(x, x) - kbar_i(x)^T A_i^{-1} kbar_i(x)
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular, LinAlgError

from apps.common.boxes import StateBox
from apps.common.exceptions import DomainError, FactorizationFailure
from .data import Dataset
from .kernels import KernelParams, kernel_matrix

logger = logging.getLogger(__name__)

# Queries are evaluated in batches of this many points to bound memory.
QUERY_BATCH = 50_000


def factorize_gram(data: Dataset, params: KernelParams, i: int, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of K_i + (sigma_f^2 + jitter) I_N.

    Pivots below N * eps * max(diag) count as failures, so exact duplicates
    with zero noise are rejected instead of producing a garbage factor.
    """
    gram = kernel_matrix(params, i, data.inputs, data.inputs)
    gram[np.diag_indices_from(gram)] += data.noise_std ** 2 + jitter
    try:
        factor = cholesky(gram, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as e:
        raise FactorizationFailure(
            f"K_{i + 1} + sigma_f^2 I is not positive definite: {e}", dim=i
        ) from e
    pivots = np.diag(factor) ** 2
    threshold = data.N * np.finfo(float).eps * np.max(np.diag(gram))
    if np.min(pivots) <= threshold:
        raise FactorizationFailure(
            f"K_{i + 1} + sigma_f^2 I is numerically singular "
            f"(smallest pivot {np.min(pivots):.3g}); check for duplicate inputs "
            f"or set a positive noise_std or jitter",
            dim=i,
        )
    return factor


@dataclass(frozen=True, eq=False)
class GPModel:
    """Fitted posterior; immutable after construction."""

    data: Dataset
    params: KernelParams
    state_box: Optional[StateBox]
    factors: Tuple[np.ndarray, ...]
    weights: Tuple[np.ndarray, ...]
    jitter: float = 0.0

    def __str__(self):
        return f"GPModel({self.data}, signal_std={self.params.signal_std.tolist()})"

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def noise_std(self) -> float:
        return self.data.noise_std

    def quadratic_form(self, i: int) -> float:
        """y_i^T (K_i + sigma_f^2 I)^{-1} y_i."""
        return float(self.data.targets[:, i] @ self.weights[i])

    def predict(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and clamped std at one point (n,) or a batch (M, n)."""
        points, single = _as_points(x, self.n)
        mean, var = _moments(self, points, with_variance=True)
        std = np.sqrt(np.maximum(var, 0.0))
        if single:
            return mean[0], std[0]
        return mean, std


def _as_points(x, n: int) -> Tuple[np.ndarray, bool]:
    points = np.asarray(x, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    if points.shape[1] != n:
        raise DomainError(f"Query points must have dimension {n}, got {points.shape[1]}")
    return points, single


def _moments(model: GPModel, points: np.ndarray, with_variance: bool):
    mean = np.empty((points.shape[0], model.n))
    var = np.empty((points.shape[0], model.n)) if with_variance else None
    for start in range(0, points.shape[0], QUERY_BATCH):
        rows = slice(start, start + QUERY_BATCH)
        for i in range(model.n):
            cross = kernel_matrix(model.params, i, points[rows], model.data.inputs)
            mean[rows, i] = cross @ model.weights[i]
            if with_variance:
                v = solve_triangular(model.factors[i], cross.T, lower=True, check_finite=False)
                var[rows, i] = model.params.signal_std[i] ** 2 - np.einsum('ij,ij->j', v, v)
    return mean, var


def fit_posterior(data: Dataset, params: KernelParams, state_box: Optional[StateBox] = None,
                  jitter: float = 0.0) -> GPModel:
    """Factorize K_i + sigma_f^2 I for every output dimension."""
    if params.n_outputs != data.n or params.n_inputs != data.n:
        raise DomainError(
            f"Kernel parameters are for {params.n_outputs} outputs x {params.n_inputs} "
            f"inputs but the dataset has dimension {data.n}"
        )
    if jitter < 0:
        raise DomainError(f"jitter must be >= 0, got {jitter}")
    factors = []
    weights = []
    for i in range(data.n):
        factor = factorize_gram(data, params, i, jitter)
        weight = cho_solve((factor, True), data.targets[:, i], check_finite=False)
        factor.setflags(write=False)
        weight.setflags(write=False)
        factors.append(factor)
        weights.append(weight)
    model = GPModel(data, params, state_box, tuple(factors), tuple(weights), float(jitter))
    logger.debug(f"Fitted {model}")
    return model


def posterior_mean(model: GPModel, x) -> np.ndarray:
    points, single = _as_points(x, model.n)
    mean, _ = _moments(model, points, with_variance=False)
    return mean[0] if single else mean


def posterior_variance(model: GPModel, x, clamp: bool = True) -> np.ndarray:
    """Componentwise sigma_i^2(x); clamp=False exposes round-off below zero."""
    points, single = _as_points(x, model.n)
    _, var = _moments(model, points, with_variance=True)
    if clamp:
        var = np.maximum(var, 0.0)
    return var[0] if single else var


def posterior_std(model: GPModel, x) -> np.ndarray:
    return np.sqrt(posterior_variance(model, x, clamp=True))


def max_std(model: GPModel, box: Optional[StateBox] = None, grid_per_dim: int = 101) -> np.ndarray:
    """Per-dimension max of sigma_i over a uniform grid on the box (corners included).

    This under-approximates the true maximum by at most the variation of sigma
    within one grid cell.
    """
    box = box or model.state_box
    if box is None:
        raise DomainError("max_std needs a state box")
    box.require_interior('state box')
    if grid_per_dim < 2:
        raise DomainError(f"grid_per_dim must be >= 2, got {grid_per_dim}")
    grid = box.grid(grid_per_dim)
    sigma_bar = posterior_std(model, grid).max(axis=0)
    cell = box.width / (grid_per_dim - 1)
    logger.info(f"sigma_bar = {sigma_bar.tolist()} on a {grid_per_dim}^{box.n} grid (cell {cell.tolist()})")
    return sigma_bar
