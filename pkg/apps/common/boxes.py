"""
Axis-aligned boxes used for the state space, start set and goal set.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import DomainError


def as_vector(values, name: str = 'vector') -> np.ndarray:
    """Return a finite, read-only 1-D float array."""
    array = np.array(values, dtype=float).reshape(-1)
    if array.size == 0:
        raise DomainError(f"{name} must not be empty")
    if not np.all(np.isfinite(array)):
        raise DomainError(f"{name} must be finite, got {array.tolist()}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class StateBox:
    """Closed box [lower, upper] in R^n.

    Degenerate sides (lower_i == upper_i) are allowed; callers that need an
    interior call require_interior().
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = as_vector(self.lower, 'lower')
        upper = as_vector(self.upper, 'upper')
        if lower.shape != upper.shape:
            raise DomainError(
                f"Box bounds differ in dimension: {lower.size} vs {upper.size}"
            )
        if np.any(lower > upper):
            raise DomainError(
                f"Box lower bound exceeds upper bound: {lower.tolist()} > {upper.tolist()}"
            )
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @classmethod
    def from_bounds(cls, lower: Sequence[float], upper: Sequence[float]) -> 'StateBox':
        return cls(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))

    @classmethod
    def cube(cls, low: float, high: float, n: int) -> 'StateBox':
        return cls(np.full(n, float(low)), np.full(n, float(high)))

    def __str__(self):
        sides = ' x '.join(f"[{lo:g}, {hi:g}]" for lo, hi in zip(self.lower, self.upper))
        return sides

    def __eq__(self, other):
        if not isinstance(other, StateBox):
            return NotImplemented
        return (np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    __hash__ = None

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def has_interior(self) -> bool:
        return bool(np.all(self.lower < self.upper))

    def require_interior(self, name: str = 'box') -> 'StateBox':
        if not self.has_interior:
            raise DomainError(f"{name} {self} has an empty interior")
        return self

    def contains(self, points, strict: bool = False) -> np.ndarray:
        """Membership test; accepts one point (n,) or a batch (M, n)."""
        points = np.asarray(points, dtype=float)
        if strict:
            inside = (points > self.lower) & (points < self.upper)
        else:
            inside = (points >= self.lower) & (points <= self.upper)
        return np.all(inside, axis=-1)

    def is_subset_of(self, other: 'StateBox') -> bool:
        return bool(np.all(self.lower >= other.lower) and np.all(self.upper <= other.upper))

    def grid(self, points_per_dim: int) -> np.ndarray:
        """Uniform grid including the corners, shape (points_per_dim**n, n)."""
        axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def sample_uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.n))

    def to_dict(self) -> dict:
        return {'lower': self.lower.tolist(), 'upper': self.upper.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> 'StateBox':
        return cls.from_bounds(data['lower'], data['upper'])
