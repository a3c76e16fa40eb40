"""
ARD squared-exponential kernels, one per output dimension.

k_i(x, x') = sigma_i^2 exp(-1/2 sum_j (x_j - x'_j)^2 / l_ij^2)
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from apps.common.exceptions import DomainError


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Signal std per output dimension and lengthscales per (output, input) pair."""

    signal_std: np.ndarray
    lengthscales: np.ndarray

    def __post_init__(self):
        signal_std = np.array(self.signal_std, dtype=float).reshape(-1)
        lengthscales = np.array(self.lengthscales, dtype=float)
        if lengthscales.ndim == 1:
            lengthscales = np.tile(lengthscales, (signal_std.size, 1))
        if lengthscales.ndim != 2 or lengthscales.shape[0] != signal_std.size:
            raise DomainError(
                f"lengthscales must have one row per output dimension "
                f"({signal_std.size}), got shape {lengthscales.shape}"
            )
        for name, values in (('signal_std', signal_std), ('lengthscales', lengthscales)):
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise DomainError(f"{name} must be finite and strictly positive")
        signal_std.setflags(write=False)
        lengthscales.setflags(write=False)
        object.__setattr__(self, 'signal_std', signal_std)
        object.__setattr__(self, 'lengthscales', lengthscales)

    def __eq__(self, other):
        if not isinstance(other, KernelParams):
            return NotImplemented
        return (np.array_equal(self.signal_std, other.signal_std)
                and np.array_equal(self.lengthscales, other.lengthscales))

    __hash__ = None

    @property
    def n_outputs(self) -> int:
        return self.signal_std.size

    @property
    def n_inputs(self) -> int:
        return self.lengthscales.shape[1]

    def log_theta(self, i: int) -> np.ndarray:
        """Log-hyperparameters [log sigma_i, log l_i1, ..., log l_in]."""
        return np.concatenate(([np.log(self.signal_std[i])], np.log(self.lengthscales[i])))

    def with_log_theta(self, i: int, theta) -> 'KernelParams':
        theta = np.asarray(theta, dtype=float)
        signal_std = self.signal_std.copy()
        lengthscales = self.lengthscales.copy()
        signal_std[i] = np.exp(theta[0])
        lengthscales[i] = np.exp(theta[1:])
        return KernelParams(signal_std, lengthscales)

    def to_dict(self) -> dict:
        return {
            'signal_std': self.signal_std.tolist(),
            'lengthscales': self.lengthscales.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'KernelParams':
        return cls(data['signal_std'], data['lengthscales'])


def kernel_matrix(params: KernelParams, i: int, a, b) -> np.ndarray:
    """Cross-covariance k_i(a_p, b_q) for row batches a (P, n) and b (Q, n)."""
    scale = params.lengthscales[i]
    a = np.atleast_2d(np.asarray(a, dtype=float)) / scale
    b = np.atleast_2d(np.asarray(b, dtype=float)) / scale
    sq_dist = cdist(a, b, metric='sqeuclidean')
    return params.signal_std[i] ** 2 * np.exp(-0.5 * sq_dist)


def kernel_eval(params: KernelParams, i: int, x, x_prime) -> float:
    return float(kernel_matrix(params, i, np.reshape(x, (1, -1)), np.reshape(x_prime, (1, -1)))[0, 0])


def kernel_grad_sup(params: KernelParams, i: int) -> float:
    """sup over x, x' and j of |dk_i(x, x')/dx_j|.

    Along coordinate j the derivative is -sigma^2 (r/l^2) exp(-r^2/(2 l^2)),
    maximal at r = l, where it equals sigma^2 e^{-1/2} / l.
    """
    return float(params.signal_std[i] ** 2 * np.exp(-0.5) / np.min(params.lengthscales[i]))
