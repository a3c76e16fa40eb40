"""
Error hierarchy for gpreach.

Each error carries the exit code management commands report for it:
0 success, 2 input error, 3 infeasibility, 4 runtime guarantee violation.
"""

from typing import Optional


class GPReachError(Exception):
    """Base class for all gpreach errors."""

    exit_code = 1


class ConfigError(GPReachError):
    """Run configuration is unparseable, out of range or points at a missing file."""

    exit_code = 2


class DomainError(GPReachError, ValueError):
    """A numeric argument lies outside the domain of an operation."""

    exit_code = 2


class FactorizationFailure(GPReachError):
    """K + sigma_f^2 I is not numerically positive definite."""

    exit_code = 2

    def __init__(self, message: str, dim: Optional[int] = None):
        super().__init__(message)
        self.dim = dim


class NegativeRadicand(DomainError):
    """B_i is too small to be an RKHS norm bound for the data."""

    def __init__(self, dim: int, radicand: float):
        super().__init__(
            f"Deterministic bound radicand is negative in dimension {dim + 1} "
            f"({radicand:.6g}); increase the RKHS norm bound B_{dim + 1}"
        )
        self.dim = dim
        self.radicand = radicand


class SingularInputMap(GPReachError):
    """g(x) g(x)^T could not be factorized."""

    exit_code = 2


class InfeasibleGoal(GPReachError):
    """No funnel satisfies the construction rules for the given boxes."""

    exit_code = 3

    def __init__(self, message: str, dim: Optional[int] = None):
        super().__init__(message)
        self.dim = dim


class DegenerateDim(InfeasibleGoal):
    """Start and goal ranges collapse onto eta in one dimension (c_i = d_i = 0)."""


class OutsideFunnel(GPReachError):
    """A state lies on or outside the funnel boundary."""

    exit_code = 4

    def __init__(self, dim: int, boundary: str, value: float, limit: float):
        super().__init__(
            f"Modulated error {value:.6g} in dimension {dim + 1} crossed the "
            f"{boundary} funnel bound {limit:.6g}"
        )
        self.dim = dim
        self.boundary = boundary
        self.value = value
        self.limit = limit


class FunnelExit(GPReachError):
    """The closed-loop state left the funnel during integration."""

    exit_code = 4

    def __init__(self, step: int, time: float, dim: int, boundary: str, trajectory=None):
        super().__init__(
            f"State left the funnel at step {step} (t={time:.6g}) in dimension "
            f"{dim + 1} through the {boundary} bound"
        )
        self.step = step
        self.time = time
        self.dim = dim
        self.boundary = boundary
        self.trajectory = trajectory


class NumericalBlowup(GPReachError):
    """The integrated state became non-finite."""

    exit_code = 4

    def __init__(self, step: int, time: float, trajectory=None):
        super().__init__(f"Non-finite state at step {step} (t={time:.6g})")
        self.step = step
        self.time = time
        self.trajectory = trajectory
