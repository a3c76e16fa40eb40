"""
Uniform error envelopes mu_i(x) -/+ s_i sigma_i(x) around the GP mean.

Two closed-form scales are provided:
  - probabilistic beta_i, holding jointly over all dimensions with
    probability at least (1 - epsilon)^n;
  - deterministic beta~_i built from an RKHS norm bound B_i, holding with
    probability one.
The envelope's lower side is mu - s sigma for both.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple
import logging

import numpy as np
from scipy.spatial.distance import pdist

from apps.common.exceptions import DomainError, NegativeRadicand
from apps.gp.data import Dataset
from apps.gp.kernels import KernelParams, kernel_grad_sup
from apps.gp.regression import GPModel

logger = logging.getLogger(__name__)

BOUND_KINDS = ('probabilistic', 'deterministic', 'monte_carlo')


@dataclass(frozen=True, eq=False)
class BoundSet:
    """Per-dimension scales turning sigma_i(x) into an error envelope."""

    kind: str
    scale: np.ndarray
    confidence: float
    epsilon: Optional[float] = None
    details: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BOUND_KINDS:
            raise DomainError(f"Unknown bound kind {self.kind!r}; expected one of {BOUND_KINDS}")
        scale = np.array(self.scale, dtype=float).reshape(-1)
        if np.any(~np.isfinite(scale)) or np.any(scale < 0):
            raise DomainError(f"Bound scales must be finite and >= 0, got {scale.tolist()}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.kind == 'deterministic' and self.confidence != 1.0:
            raise DomainError("Deterministic bounds hold with confidence 1")
        scale.setflags(write=False)
        object.__setattr__(self, 'scale', scale)

    def __str__(self):
        return f"{self.kind} bound, scale={self.scale.tolist()}, confidence={self.confidence:.6g}"

    @property
    def n(self) -> int:
        return self.scale.size

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'scale': self.scale.tolist(),
            'confidence': self.confidence,
            'epsilon': self.epsilon,
            'details': self.details,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'BoundSet':
        return cls(data['kind'], data['scale'], data['confidence'],
                   data.get('epsilon'), data.get('details', {}))


@dataclass(frozen=True)
class RKHSBound:
    """RKHS norm bounds B_i derived from square-root Lipschitz constants L_i."""

    norm_bound: np.ndarray
    lipschitz: np.ndarray
    kernel_grad_sup: np.ndarray


def confidence_to_epsilon(confidence: float, n: int) -> float:
    """epsilon such that (1 - epsilon)^n equals the joint confidence."""
    return float(1.0 - confidence ** (1.0 / n))


def beta_probabilistic(rkhs_norm_bound: float, gamma: float, N: int, epsilon: float) -> float:
    """beta_i = sqrt(2 ||f_i||^2 + 300 gamma_i log^3((N + 1) / epsilon))."""
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if gamma < 0:
        raise DomainError(f"information gain must be >= 0, got {gamma}")
    if N < 1:
        raise DomainError(f"sample count must be >= 1, got {N}")
    return float(np.sqrt(2.0 * rkhs_norm_bound ** 2 + 300.0 * gamma * np.log((N + 1) / epsilon) ** 3))


def rkhs_bound(lipschitz: float, params: KernelParams, i: int) -> float:
    """B_i = L_i / sqrt(2 sup |dk_i/dx|) for |f_i(x) - f_i(y)| <= L_i sqrt(||x - y||_inf)."""
    if not lipschitz > 0:
        raise DomainError(f"Lipschitz constant must be > 0, got {lipschitz}")
    return float(lipschitz / np.sqrt(2.0 * kernel_grad_sup(params, i)))


def rkhs_bounds(lipschitz, params: KernelParams) -> RKHSBound:
    lipschitz = np.asarray(lipschitz, dtype=float)
    grad_sup = np.array([kernel_grad_sup(params, i) for i in range(params.n_outputs)])
    norm_bound = np.array([rkhs_bound(lipschitz[i], params, i) for i in range(params.n_outputs)])
    return RKHSBound(norm_bound, lipschitz, grad_sup)


def estimate_lipschitz_sqrt(data: Dataset, i: int) -> float:
    """max over sample pairs of |y_i(a) - y_i(b)| / sqrt(||a - b||_inf).

    A lower estimate of L_i from data, so anything built on it is not certified.
    Pairs with identical inputs are skipped.
    """
    if data.N < 2:
        raise DomainError("Estimating a Lipschitz constant needs at least two samples")
    distances = pdist(data.inputs, metric='chebyshev')
    jumps = pdist(data.targets[:, [i]], metric='cityblock')
    distinct = distances > 0
    if not np.any(distinct):
        raise DomainError("All dataset inputs are identical")
    return float(np.max(jumps[distinct] / np.sqrt(distances[distinct])))


def beta_deterministic(rkhs_norm_bound: float, data: Dataset, model: GPModel, i: int) -> float:
    """beta~_i = sqrt(B_i^2 - y_i^T (K_i + sigma_f^2 I)^{-1} y_i + N)."""
    radicand = rkhs_norm_bound ** 2 - model.quadratic_form(i) + data.N
    if radicand < 0:
        raise NegativeRadicand(i, radicand)
    return float(np.sqrt(radicand))


def envelope(model: GPModel, bound: BoundSet, x) -> Tuple[np.ndarray, np.ndarray]:
    """Lower and upper envelope mu -/+ scale * sigma at x."""
    mean, std = model.predict(x)
    width = bound.scale * std
    return mean - width, mean + width
