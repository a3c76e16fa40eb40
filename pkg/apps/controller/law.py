"""
Closed-form time-varying reachability controller.

    u(x, t) = -g(x)^T (g(x) g(x)^T)^{-1} v(x, t)
    v_i     = mu_i(x) + sign(x_i - eta_i) beta_i sigma_i(x) + xi_i(x, rho(t)) + epsbar (x_i - eta_i)

sign(0) is +1. With smoothing > 0 the sign is replaced by tanh((x_i - eta_i) / smoothing).
"""

from dataclasses import dataclass
from typing import Callable, Tuple
import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from apps.bounds.envelopes import BoundSet
from apps.common.exceptions import DomainError, SingularInputMap
from apps.funnel.synthesis import FunnelSpec
from apps.funnel.transform import TransformedError, transform
from apps.gp.regression import GPModel

logger = logging.getLogger(__name__)

InputMap = Callable[[np.ndarray], np.ndarray]


def identity_input_map(x: np.ndarray) -> np.ndarray:
    return np.eye(np.asarray(x).size)


@dataclass(frozen=True, eq=False)
class ControlLaw:
    model: GPModel
    bound: BoundSet
    spec: FunnelSpec
    g_map: InputMap = identity_input_map
    smoothing: float = 0.0

    def __post_init__(self):
        if self.bound.n != self.model.n or self.spec.n != self.model.n:
            raise DomainError(
                f"Bound ({self.bound.n}), funnel ({self.spec.n}) and model ({self.model.n}) "
                f"dimensions differ"
            )
        if self.smoothing < 0:
            raise DomainError(f"smoothing must be >= 0, got {self.smoothing}")


@dataclass(frozen=True, eq=False)
class ControlEvaluation:
    """Every term of one control evaluation."""

    u: np.ndarray
    v: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    robustness: np.ndarray
    error: TransformedError


def _signs(law: ControlLaw, x: np.ndarray) -> np.ndarray:
    offset = x - law.spec.eta
    if law.smoothing > 0:
        return np.tanh(offset / law.smoothing)
    return np.where(offset >= 0, 1.0, -1.0)


def _robustness(law: ControlLaw, x: np.ndarray, std: np.ndarray) -> np.ndarray:
    return _signs(law, x) * law.bound.scale * std


def robustness_term(law: ControlLaw, x) -> np.ndarray:
    """Componentwise sign(x_i - eta_i) beta_i sigma_i(x)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    _, std = law.model.predict(x)
    return _robustness(law, x, std)


def invert_input_map(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """-g^T (g g^T)^{-1} v through a Cholesky factorization of g g^T."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if g.shape[0] != v.size:
        raise DomainError(f"g(x) must have {v.size} rows, got shape {g.shape}")
    try:
        factor = cho_factor(g @ g.T, lower=True)
    except LinAlgError as e:
        raise SingularInputMap(f"g(x) g(x)^T is not positive definite: {e}") from e
    return -g.T @ cho_solve(factor, v)


def evaluate(law: ControlLaw, x, t: float) -> ControlEvaluation:
    x = np.asarray(x, dtype=float).reshape(-1)
    error = transform(law.spec, x, t)
    mean, std = law.model.predict(x)
    robustness = _robustness(law, x, std)
    v = mean + robustness + error.xi + law.spec.eps_bar * (x - law.spec.eta)
    u = invert_input_map(law.g_map(x), v)
    return ControlEvaluation(u, v, mean, std, robustness, error)


def control(law: ControlLaw, x, t: float) -> np.ndarray:
    return evaluate(law, x, t).u


def lyapunov_value(law: ControlLaw, x, t: float) -> Tuple[float, float]:
    """V = xi^T xi / 2 and its decrement bound -xi^T Phi xi."""
    error = transform(law.spec, x, t)
    value = 0.5 * float(error.xi @ error.xi)
    decrement = -float(error.xi @ (error.phi * error.xi))
    return value, decrement
