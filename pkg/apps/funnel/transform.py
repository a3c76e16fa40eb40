"""
Error normalization and the log transformation onto the whole real line.

    xhat_i = (x_i - eta_i) / rho_i(t)            in (-c_i, d_i)
    xi_i   = log(d_i (c_i + xhat_i) / (c_i (d_i - xhat_i)))
    phi_i  = (1 / rho_i) (c_i + d_i) / ((c_i + xhat_i)(d_i - xhat_i))
    alpha_i = -rhodot_i / rho_i
"""

from dataclasses import dataclass
import logging

import numpy as np

from apps.common.exceptions import DomainError, OutsideFunnel
from .synthesis import FunnelSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransformedError:
    xi: np.ndarray
    x_hat: np.ndarray
    phi: np.ndarray
    alpha: np.ndarray
    rho: np.ndarray


def _require_sides(spec: FunnelSpec):
    if np.any(spec.c <= 0) or np.any(spec.d <= 0):
        raise DomainError("The transformation needs c_i > 0 and d_i > 0 in every dimension")


def log_transform(spec: FunnelSpec, x_hat) -> np.ndarray:
    """xi for a normalized error; raises OutsideFunnel unless -c_i < x_hat_i < d_i."""
    _require_sides(spec)
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    for i in range(spec.n):
        if not x_hat[i] > -spec.c[i]:
            raise OutsideFunnel(i, 'lower', float(x_hat[i]), float(-spec.c[i]))
        if not x_hat[i] < spec.d[i]:
            raise OutsideFunnel(i, 'upper', float(x_hat[i]), float(spec.d[i]))
    return np.log1p(x_hat / spec.c) - np.log1p(-x_hat / spec.d)


def transform(spec: FunnelSpec, x, t: float) -> TransformedError:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != spec.n:
        raise DomainError(f"State must have {spec.n} entries, got {x.size}")
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    rho = spec.rho(t)
    x_hat = (x - spec.eta) / rho
    xi = log_transform(spec, x_hat)
    phi = (spec.c + spec.d) / ((spec.c + x_hat) * (spec.d - x_hat)) / rho
    alpha = -spec.rho_dot(t) / rho
    return TransformedError(xi, x_hat, phi, alpha, rho)


def inverse_transform(spec: FunnelSpec, xi) -> np.ndarray:
    """Modulated error xhat with transform(xhat) == xi, evaluated without overflow."""
    _require_sides(spec)
    xi = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise DomainError("xi must be finite")
    c, d = spec.c, spec.d
    positive = xi > 0
    decay = np.exp(-np.abs(xi))
    high = c * d * -np.expm1(-np.abs(xi)) / (d * decay + c)
    low = c * d * np.expm1(-np.abs(xi)) / (d + c * decay)
    return np.where(positive, high, low)


def state_from_xi(spec: FunnelSpec, xi, t: float) -> np.ndarray:
    return spec.eta + spec.rho(t) * inverse_transform(spec, xi)
