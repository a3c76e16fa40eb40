"""
Monte-Carlo coverage of an error envelope with exact binomial intervals.

A trial draws x uniformly from the box and hits when every component of the
true drift lies inside the envelope around the posterior mean:
    |f_i(x) - mu_i(x)| <= threshold_i(x)
with threshold_i(x) = s_i * sigma_i(x) (pointwise) or s_i * sigmabar_i
(constant). This approximates a claim over all x by sampled points only.

Trials are split into chunks with independent substreams spawned from the
seed, so the hit count does not depend on how chunks are scheduled.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple
import logging

import numpy as np
from scipy.stats import beta as beta_dist

from apps.common.boxes import StateBox, as_vector
from apps.common.exceptions import DomainError
from apps.gp.regression import GPModel, posterior_mean
from .envelopes import BoundSet, confidence_to_epsilon

logger = logging.getLogger(__name__)

ENVELOPE_MODES = ('constant', 'pointwise')
DEFAULT_CHUNK = 100_000

Truth = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CoverageReport:
    threshold: np.ndarray
    hits: int
    trials: int
    interval: Tuple[float, float]
    confidence_level: float
    seed: Optional[int]
    mode: str = 'constant'

    def __post_init__(self):
        if not 0 <= self.hits <= self.trials:
            raise DomainError(f"hits must lie in [0, trials], got {self.hits}/{self.trials}")
        object.__setattr__(self, 'threshold', np.array(self.threshold, dtype=float).reshape(-1))

    def __eq__(self, other):
        if not isinstance(other, CoverageReport):
            return NotImplemented
        return (np.array_equal(self.threshold, other.threshold)
                and (self.hits, self.trials, tuple(self.interval), self.confidence_level,
                     self.seed, self.mode)
                == (other.hits, other.trials, tuple(other.interval), other.confidence_level,
                    other.seed, other.mode))

    __hash__ = None

    def __str__(self):
        lo, hi = self.interval
        return (
            f"{self.hits}/{self.trials} sampled states inside the {self.mode} envelope "
            f"{np.round(self.threshold, 6).tolist()}; coverage in [{lo:.4f}, {hi:.4f}] "
            f"with confidence {self.confidence_level:.12g} (sampled points only, seed={self.seed})"
        )

    @property
    def rate(self) -> float:
        return self.hits / self.trials

    @property
    def epsilon(self) -> float:
        """Per-dimension epsilon whose joint confidence equals the interval's lower end."""
        return confidence_to_epsilon(self.interval[0], self.threshold.size)

    def to_row(self) -> dict:
        row = {
            'mode': self.mode,
            'hits': self.hits,
            'trials': self.trials,
            'rate': self.rate,
            'p_lo': self.interval[0],
            'p_hi': self.interval[1],
            'confidence_level': self.confidence_level,
            'seed': self.seed,
        }
        for i, value in enumerate(self.threshold):
            row[f'threshold_{i + 1}'] = value
        return row

    def to_bound_set(self, sigma_bar=None) -> BoundSet:
        """Monte-Carlo BoundSet; constant thresholds are turned into scales via sigma_bar."""
        scale = self.threshold
        if self.mode == 'constant' and sigma_bar is not None:
            scale = self.threshold / as_vector(sigma_bar, 'sigma_bar')
        return BoundSet('monte_carlo', scale, self.interval[0], self.epsilon,
                        {'p_hi': self.interval[1], 'hits': self.hits, 'trials': self.trials,
                         'confidence_level': self.confidence_level, 'mode': self.mode})


def clopper_pearson(hits: int, trials: int, confidence_level: float) -> Tuple[float, float]:
    """Exact two-sided binomial interval for hits/trials."""
    if trials < 1 or not 0 <= hits <= trials:
        raise DomainError(f"Invalid binomial count {hits}/{trials}")
    if not 0.0 < confidence_level < 1.0:
        raise DomainError(f"confidence_level must lie in (0, 1), got {confidence_level}")
    alpha = 1.0 - confidence_level
    lower = 0.0 if hits == 0 else float(beta_dist.ppf(alpha / 2, hits, trials - hits + 1))
    upper = 1.0 if hits == trials else float(beta_dist.ppf(1 - alpha / 2, hits + 1, trials - hits))
    return lower, upper


def envelope_threshold(model: GPModel, scale, mode: str, sigma_bar=None) -> np.ndarray:
    """Per-dimension constant envelope, or the scales themselves in pointwise mode."""
    if mode not in ENVELOPE_MODES:
        raise DomainError(f"Unknown envelope mode {mode!r}; expected one of {ENVELOPE_MODES}")
    scale = np.asarray(scale, dtype=float).reshape(-1)
    if scale.size != model.n or np.any(np.isnan(scale)) or np.any(scale < 0):
        raise DomainError(f"Envelope needs {model.n} nonnegative scales, got {scale.tolist()}")
    if mode == 'constant' and sigma_bar is not None:
        return scale * np.asarray(sigma_bar, dtype=float)
    return scale


def chunk_plan(trials: int, chunk_size: int = DEFAULT_CHUNK) -> List[int]:
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    if chunk_size < 1:
        raise DomainError(f"chunk_size must be >= 1, got {chunk_size}")
    full, rest = divmod(trials, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def chunk_seeds(seed: Optional[int], n_chunks: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n_chunks)


def count_hits(model: GPModel, truth: Truth, box: StateBox, threshold, mode: str,
               seed_seq, trials: int) -> int:
    """Hits for one chunk drawn from its own substream."""
    rng = np.random.default_rng(seed_seq)
    points = box.sample_uniform(rng, trials)
    values = np.asarray(truth(points), dtype=float)
    if mode == 'pointwise':
        mean, std = model.predict(points)
        bound = threshold * std
    else:
        mean = posterior_mean(model, points)
        bound = threshold
    inside = np.all(np.abs(values - mean) <= bound, axis=1)
    return int(np.count_nonzero(inside))


def coverage_report(threshold, hits: int, trials: int, confidence_level: float,
                    seed: Optional[int], mode: str) -> CoverageReport:
    interval = clopper_pearson(hits, trials, confidence_level)
    report = CoverageReport(threshold, hits, trials, interval, confidence_level, seed, mode)
    logger.info(f"Coverage: {report}")
    return report


def monte_carlo_coverage(model: GPModel, truth: Truth, box: StateBox, scale, trials: int,
                         confidence_level: float, seed: Optional[int] = 0, mode: str = 'pointwise',
                         sigma_bar=None, chunk_size: int = DEFAULT_CHUNK) -> CoverageReport:
    """Estimate the joint coverage of the envelope over uniformly sampled states.

    In constant mode the envelope is scale * sigma_bar, or scale itself when
    sigma_bar is omitted.
    """
    box.require_interior('coverage box')
    threshold = envelope_threshold(model, scale, mode, sigma_bar)
    plan = chunk_plan(trials, chunk_size)
    seeds = chunk_seeds(seed, len(plan))
    hits = sum(count_hits(model, truth, box, threshold, mode, s, m) for s, m in zip(seeds, plan))
    return coverage_report(threshold, hits, trials, confidence_level, seed, mode)


def calibrate_envelope(model: GPModel, truth: Truth, box: StateBox, target_coverage: float,
                       trials: int, seed: Optional[int] = 0) -> np.ndarray:
    """Smallest constant per-dimension envelope reaching the target empirical coverage.

    The miss budget 1 - target is split evenly over the dimensions; a target
    of 1 returns the largest sampled error per dimension.
    """
    if not 0.0 < target_coverage <= 1.0:
        raise DomainError(f"target_coverage must lie in (0, 1], got {target_coverage}")
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    box.require_interior('calibration box')
    rng = np.random.default_rng(seed)
    points = box.sample_uniform(rng, trials)
    errors = np.abs(np.asarray(truth(points), dtype=float) - posterior_mean(model, points))
    if target_coverage == 1.0:
        envelope = errors.max(axis=0)
    else:
        level = 1.0 - (1.0 - target_coverage) / model.n
        envelope = np.quantile(errors, level, axis=0, method='higher')
    logger.info(f"Calibrated envelope for coverage {target_coverage:g}: {envelope.tolist()}")
    return envelope
