"""
Run configuration: an INI file with one section per pipeline stage.

Vectors are comma separated; matrix rows are separated by ';'. Every key has
a default matching the two-state case study, so an empty file is valid.
Unknown sections or keys are rejected.
"""

from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple
import logging
import math

from apps.common.boxes import StateBox
from apps.common.exceptions import ConfigError

logger = logging.getLogger(__name__)

Vector = Tuple[float, ...]
Matrix = Tuple[Vector, ...]

BOUND_METHODS = ('probabilistic', 'deterministic', 'monte_carlo')


def _kind(kind: str, default):
    return field(default=default, metadata={'kind': kind})


def _parse_vector(text: str) -> Vector:
    return tuple(float(part) for part in text.split(',') if part.strip())


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind == 'str':
        return text
    if kind == 'int':
        return int(text)
    if kind == 'float':
        return float(text)
    if kind == 'bool':
        lowered = text.lower()
        if lowered in ('1', 'yes', 'true', 'on'):
            return True
        if lowered in ('0', 'no', 'false', 'off'):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == 'vector':
        return _parse_vector(text)
    if kind == 'optional_vector':
        return _parse_vector(text) if text else None
    if kind == 'matrix':
        return tuple(_parse_vector(row) for row in text.split(';') if row.strip())
    raise ValueError(f"unknown kind {kind}")


def _format_value(kind: str, value) -> str:
    if value is None:
        return ''
    if kind == 'float':
        return repr(float(value))
    if kind == 'bool':
        return 'true' if value else 'false'
    if kind in ('vector', 'optional_vector'):
        return ', '.join(repr(float(v)) for v in value)
    if kind == 'matrix':
        return '; '.join(', '.join(repr(float(v)) for v in row) for row in value)
    return str(value)


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _finite(values) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class PlantSection:
    name: str = _kind('str', 'case_study')


@dataclass(frozen=True)
class DatasetSection:
    path: str = _kind('str', '')
    size: int = _kind('int', 50)
    noise_std: float = _kind('float', 0.01)
    seed: int = _kind('int', 0)
    sampling: str = _kind('str', 'uniform')

    def __post_init__(self):
        _require(self.size >= 1, f"[dataset] size must be >= 1, got {self.size}")
        _require(math.isfinite(self.noise_std) and self.noise_std >= 0,
                 f"[dataset] noise_std must be >= 0, got {self.noise_std}")
        _require(self.seed >= 0, f"[dataset] seed must be >= 0, got {self.seed}")
        _require(self.sampling in ('uniform', 'trajectory'),
                 f"[dataset] sampling must be 'uniform' or 'trajectory', got {self.sampling!r}")


@dataclass(frozen=True)
class KernelSection:
    fit: bool = _kind('bool', True)
    signal_std: Vector = _kind('vector', (316.0, 25.3))
    lengthscales: Matrix = _kind('matrix', ((2.9, 177.0), (1.67, 50.5)))
    restarts: int = _kind('int', 8)
    iterations: int = _kind('int', 200)
    jitter: float = _kind('float', 0.0)

    def __post_init__(self):
        _require(all(v > 0 for v in self.signal_std) and _finite(self.signal_std),
                 "[kernel] signal_std entries must be > 0")
        _require(all(v > 0 and math.isfinite(v) for row in self.lengthscales for v in row),
                 "[kernel] lengthscales entries must be > 0")
        _require(self.restarts >= 0, f"[kernel] restarts must be >= 0, got {self.restarts}")
        _require(self.iterations >= 1, f"[kernel] iterations must be >= 1, got {self.iterations}")
        _require(self.jitter >= 0, f"[kernel] jitter must be >= 0, got {self.jitter}")


@dataclass(frozen=True)
class BoundsSection:
    method: str = _kind('str', 'monte_carlo')
    epsilon: float = _kind('float', 0.01)
    gamma: Optional[Vector] = _kind('optional_vector', None)
    info_gain_candidates: int = _kind('int', 500)
    lipschitz: Optional[Vector] = _kind('optional_vector', None)
    lipschitz_safety: float = _kind('float', 2.0)
    rkhs_norm: Optional[Vector] = _kind('optional_vector', None)
    envelope: Vector = _kind('vector', (0.04, 0.04))
    envelope_mode: str = _kind('str', 'constant')
    trials: int = _kind('int', 1_000_000)
    confidence: float = _kind('float', 0.9999999999)
    seed: int = _kind('int', 0)

    def __post_init__(self):
        _require(self.method in BOUND_METHODS,
                 f"[bounds] method must be one of {', '.join(BOUND_METHODS)}, got {self.method!r}")
        _require(0 < self.epsilon < 1, f"[bounds] epsilon must lie in (0, 1), got {self.epsilon}")
        _require(self.gamma is None or all(v >= 0 for v in self.gamma), "[bounds] gamma entries must be >= 0")
        _require(self.info_gain_candidates >= 1, "[bounds] info_gain_candidates must be >= 1")
        _require(self.lipschitz is None or all(v > 0 for v in self.lipschitz),
                 "[bounds] lipschitz entries must be > 0")
        _require(self.lipschitz_safety > 0, "[bounds] lipschitz_safety must be > 0")
        _require(self.rkhs_norm is None or all(v > 0 for v in self.rkhs_norm),
                 "[bounds] rkhs_norm entries must be > 0")
        _require(all(v >= 0 for v in self.envelope) and _finite(self.envelope),
                 "[bounds] envelope entries must be >= 0")
        _require(self.envelope_mode in ('constant', 'pointwise'),
                 f"[bounds] envelope_mode must be 'constant' or 'pointwise', got {self.envelope_mode!r}")
        _require(self.trials >= 1, f"[bounds] trials must be >= 1, got {self.trials}")
        _require(0 < self.confidence < 1, f"[bounds] confidence must lie in (0, 1), got {self.confidence}")
        _require(self.seed >= 0, f"[bounds] seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class FunnelSection:
    start_lower: Vector = _kind('vector', (-3.0, -3.0))
    start_upper: Vector = _kind('vector', (-2.0, -2.0))
    goal_lower: Vector = _kind('vector', (1.0, 1.0))
    goal_upper: Vector = _kind('vector', (3.0, 3.0))
    decay: Vector = _kind('vector', (1.0, 1.0))
    shrink: float = _kind('float', 0.5)
    eta: Optional[Vector] = _kind('optional_vector', None)

    def __post_init__(self):
        _require(all(v > 0 for v in self.decay), "[funnel] decay entries must be > 0")
        _require(0 < self.shrink <= 1, f"[funnel] shrink must lie in (0, 1], got {self.shrink}")

    @property
    def start(self) -> StateBox:
        return _box('[funnel] start', self.start_lower, self.start_upper)

    @property
    def goal(self) -> StateBox:
        return _box('[funnel] goal', self.goal_lower, self.goal_upper)


@dataclass(frozen=True)
class SimSection:
    dt: float = _kind('float', 1e-3)
    t_max: float = _kind('float', 10.0)
    integrator: str = _kind('str', 'rk4')
    stop_on_reach: bool = _kind('bool', False)
    x0: Vector = _kind('vector', (-2.5, -2.5))
    grid: int = _kind('int', 0)
    smoothing: float = _kind('float', 0.0)

    def __post_init__(self):
        _require(0 < self.dt <= self.t_max, f"[sim] need 0 < dt <= t_max, got dt={self.dt}, t_max={self.t_max}")
        _require(self.integrator in ('rk4', 'euler'),
                 f"[sim] integrator must be 'rk4' or 'euler', got {self.integrator!r}")
        _require(self.grid >= 0, f"[sim] grid must be >= 0, got {self.grid}")
        _require(self.smoothing >= 0, f"[sim] smoothing must be >= 0, got {self.smoothing}")


@dataclass(frozen=True)
class OutputSection:
    directory: str = _kind('str', '')


def _box(name: str, lower, upper) -> StateBox:
    try:
        return StateBox.from_bounds(lower, upper)
    except ValueError as e:
        raise ConfigError(f"{name} box is invalid: {e}") from e


SECTIONS = {
    'plant': PlantSection,
    'dataset': DatasetSection,
    'kernel': KernelSection,
    'bounds': BoundsSection,
    'funnel': FunnelSection,
    'sim': SimSection,
    'output': OutputSection,
}


@dataclass(frozen=True)
class RunConfig:
    plant: PlantSection = field(default_factory=PlantSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    kernel: KernelSection = field(default_factory=KernelSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)
    funnel: FunnelSection = field(default_factory=FunnelSection)
    sim: SimSection = field(default_factory=SimSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        n = len(self.funnel.start_lower)
        vectors = {
            '[kernel] signal_std': self.kernel.signal_std,
            '[bounds] envelope': self.bounds.envelope,
            '[funnel] start_upper': self.funnel.start_upper,
            '[funnel] goal_lower': self.funnel.goal_lower,
            '[funnel] goal_upper': self.funnel.goal_upper,
            '[funnel] decay': self.funnel.decay,
            '[sim] x0': self.sim.x0,
        }
        for name in ('gamma', 'lipschitz', 'rkhs_norm'):
            if getattr(self.bounds, name) is not None:
                vectors[f'[bounds] {name}'] = getattr(self.bounds, name)
        if self.funnel.eta is not None:
            vectors['[funnel] eta'] = self.funnel.eta
        for name, values in vectors.items():
            _require(len(values) == n, f"{name} has {len(values)} entries, expected {n}")
        _require(len(self.kernel.lengthscales) == n and all(len(r) == n for r in self.kernel.lengthscales),
                 f"[kernel] lengthscales must be a {n}x{n} matrix")
        for box in (self.funnel.start, self.funnel.goal):
            _require(box.n == n, f"Funnel boxes must have dimension {n}")

    @property
    def n(self) -> int:
        return len(self.funnel.start_lower)

    @classmethod
    def parse(cls, text: str, source: str = '<string>') -> 'RunConfig':
        parser = ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=source)
        except ConfigParserError as e:
            raise ConfigError(f"Cannot parse {source}: {e}") from e
        sections = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"Unknown section [{section}] in {source}")
            section_cls = SECTIONS[section]
            known = {f.name: f for f in fields(section_cls)}
            values = {}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"Unknown key '{key}' in section [{section}] of {source}")
                try:
                    values[key] = _parse_value(known[key].metadata['kind'], raw)
                except ValueError as e:
                    raise ConfigError(f"[{section}] {key} = {raw!r} is invalid: {e}") from e
            sections[section] = section_cls(**values)
        return cls(**sections)

    @classmethod
    def load(cls, path) -> 'RunConfig':
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        config = cls.parse(path.read_text(encoding='utf-8'), source=str(path))
        if config.dataset.path:
            dataset = Path(config.dataset.path)
            if not dataset.is_absolute():
                dataset = path.parent / dataset
            config = replace(config, dataset=replace(config.dataset, path=str(dataset)))
        logger.debug(f"Loaded run configuration from {path}")
        return config

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            lines.append(f'[{name}]')
            for f in fields(section):
                lines.append(f"{f.name} = {_format_value(f.metadata['kind'], getattr(section, f.name))}")
            lines.append('')
        return '\n'.join(lines)

    def with_overrides(self, seed: Optional[int] = None, trials: Optional[int] = None,
                       grid: Optional[int] = None, no_fit: bool = False,
                       out: Optional[str] = None) -> 'RunConfig':
        """Apply command-line flags on top of the file values."""
        config = self
        if seed is not None:
            config = replace(config, dataset=replace(config.dataset, seed=seed),
                             bounds=replace(config.bounds, seed=seed))
        if trials is not None:
            config = replace(config, bounds=replace(config.bounds, trials=trials))
        if grid is not None:
            config = replace(config, sim=replace(config.sim, grid=grid))
        if no_fit:
            config = replace(config, kernel=replace(config.kernel, fit=False))
        if out is not None:
            config = replace(config, output=replace(config.output, directory=str(out)))
        return config
