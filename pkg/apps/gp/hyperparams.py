"""
Log-evidence and its maximization over ARD-SE hyperparameters.

Hyperparameters are handled in log space, theta_i = [log sigma_i, log l_i1, ..., log l_in],
so positivity never needs a constraint. The noise level is treated as known.
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

from apps.common.exceptions import DomainError, FactorizationFailure
from .data import Dataset
from .kernels import KernelParams, kernel_matrix
from .regression import factorize_gram

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def log_marginal_likelihood(data: Dataset, params: KernelParams, i: int,
                            jitter: float = 0.0) -> Tuple[float, np.ndarray]:
    """log p(y_i | X, theta_i) and its gradient with respect to theta_i."""
    factor = factorize_gram(data, params, i, jitter)
    y = data.targets[:, i]
    alpha = cho_solve((factor, True), y, check_finite=False)
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(factor))) - 0.5 * data.N * LOG_2PI

    # d/dtheta = 1/2 tr((alpha alpha^T - A^{-1}) dK/dtheta)
    inner = np.outer(alpha, alpha) - cho_solve((factor, True), np.eye(data.N), check_finite=False)
    signal_gram = kernel_matrix(params, i, data.inputs, data.inputs)
    grad = np.empty(1 + data.n)
    grad[0] = 0.5 * np.sum(inner * (2.0 * signal_gram))
    for j in range(data.n):
        diff = data.inputs[:, j][:, None] - data.inputs[:, j][None, :]
        d_gram = signal_gram * diff ** 2 / params.lengthscales[i, j] ** 2
        grad[1 + j] = 0.5 * np.sum(inner * d_gram)
    return float(value), grad


@dataclass(frozen=True)
class HyperparameterFit:
    """Outcome of optimize_hyperparams; improved=False means init was returned."""

    params: KernelParams
    log_evidence: np.ndarray
    initial_log_evidence: np.ndarray
    improved: bool

    def __str__(self):
        status = 'improved' if self.improved else 'unchanged'
        return f"HyperparameterFit({status}, log_evidence={self.log_evidence.tolist()})"


def optimize_hyperparams(data: Dataset, init: KernelParams, budget: int = 200,
                         restarts: int = 8, seed: Optional[int] = 0,
                         jitter: float = 0.0, log_bound: float = 8.0) -> HyperparameterFit:
    """Multi-start L-BFGS-B on the log evidence of each output dimension.

    The first start is init itself; the remaining restarts perturb init's log
    parameters with unit Gaussian noise. Search is confined to
    init +/- log_bound in log space. A dimension keeps init's values unless a
    start strictly improves on them.
    """
    if budget < 1:
        raise DomainError(f"budget must be >= 1, got {budget}")
    if restarts < 0:
        raise DomainError(f"restarts must be >= 0, got {restarts}")
    rng = np.random.default_rng(seed)
    params = init
    initial = np.empty(data.n)
    final = np.empty(data.n)
    any_improved = False

    for i in range(data.n):
        theta0 = init.log_theta(i)
        try:
            initial[i], _ = log_marginal_likelihood(data, init, i, jitter)
        except FactorizationFailure:
            initial[i] = -np.inf
        best_theta, best_value = theta0, initial[i]
        bounds = [(t - log_bound, t + log_bound) for t in theta0]

        def objective(theta, i=i):
            try:
                value, grad = log_marginal_likelihood(data, init.with_log_theta(i, theta), i, jitter)
            except FactorizationFailure:
                return 1e25, np.zeros_like(theta)
            return -value, -grad

        starts = [theta0] + [theta0 + rng.standard_normal(theta0.size) for _ in range(restarts)]
        for start in starts:
            start = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
            result = minimize(objective, start, jac=True, method='L-BFGS-B',
                              bounds=bounds, options={'maxiter': budget})
            if np.isfinite(result.fun) and -result.fun > best_value:
                best_theta, best_value = result.x, -result.fun

        if best_value > initial[i]:
            params = params.with_log_theta(i, best_theta)
            any_improved = True
            logger.info(
                f"Dimension {i + 1}: log evidence {initial[i]:.6g} -> {best_value:.6g}, "
                f"sigma_k={np.exp(best_theta[0]):.6g}, lengthscales={np.exp(best_theta[1:]).tolist()}"
            )
        else:
            logger.warning(f"Dimension {i + 1}: no improving hyperparameters found, keeping init")
        final[i] = best_value

    return HyperparameterFit(params, final, initial, any_improved)
