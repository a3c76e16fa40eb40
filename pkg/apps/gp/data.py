"""
Noisy state/derivative measurements used to learn the drift.
"""

from dataclasses import dataclass
from pathlib import Path
import logging

import numpy as np
import pandas as pd
from sklearn.utils import check_array, check_consistent_length

from apps.common.exceptions import ConfigError, DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """N measurements x in X with y = f(x) + w, w ~ N(0, noise_std^2 I)."""

    inputs: np.ndarray
    targets: np.ndarray
    noise_std: float

    def __post_init__(self):
        try:
            inputs = check_array(self.inputs, dtype=np.float64, ensure_2d=True, copy=True)
            targets = check_array(self.targets, dtype=np.float64, ensure_2d=True, copy=True)
            check_consistent_length(inputs, targets)
        except ValueError as e:
            raise DomainError(f"Invalid dataset: {e}") from e
        if inputs.shape[1] != targets.shape[1]:
            raise DomainError(
                f"Inputs have dimension {inputs.shape[1]} but targets have {targets.shape[1]}"
            )
        noise_std = float(self.noise_std)
        if not np.isfinite(noise_std) or noise_std < 0:
            raise DomainError(f"noise_std must be finite and >= 0, got {self.noise_std}")
        inputs.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, 'inputs', inputs)
        object.__setattr__(self, 'targets', targets)
        object.__setattr__(self, 'noise_std', noise_std)

    def __str__(self):
        return f"Dataset(N={self.N}, n={self.n}, noise_std={self.noise_std:g})"

    @property
    def n(self) -> int:
        return self.inputs.shape[1]

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    def to_frame(self) -> pd.DataFrame:
        columns = {f"x_{j + 1}": self.inputs[:, j] for j in range(self.n)}
        columns.update({f"y_{j + 1}": self.targets[:, j] for j in range(self.n)})
        return pd.DataFrame(columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, noise_std: float) -> 'Dataset':
        x_cols = sorted((c for c in frame.columns if c.startswith('x_')), key=_column_index)
        y_cols = sorted((c for c in frame.columns if c.startswith('y_')), key=_column_index)
        unknown = set(frame.columns) - set(x_cols) - set(y_cols)
        if unknown:
            raise ConfigError(f"Unexpected dataset columns: {sorted(unknown)}")
        expected = [f"x_{j + 1}" for j in range(len(x_cols))]
        if x_cols != expected or y_cols != [f"y_{j + 1}" for j in range(len(y_cols))]:
            raise ConfigError(
                f"Dataset columns must be x_1..x_n, y_1..y_n; got {list(frame.columns)}"
            )
        return cls(frame[x_cols].to_numpy(), frame[y_cols].to_numpy(), noise_std)


def _column_index(name: str) -> int:
    try:
        return int(name.split('_', 1)[1])
    except ValueError:
        raise ConfigError(f"Malformed dataset column name: {name!r}")


def read_dataset_csv(path, noise_std: float) -> Dataset:
    """Read a dataset CSV with header x_1..x_n, y_1..y_n."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, encoding='utf-8')
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot read dataset file {path}: {e}") from e
    dataset = Dataset.from_frame(frame, noise_std)
    logger.info(f"Loaded {dataset} from {path}")
    return dataset


def write_dataset_csv(dataset: Dataset, path) -> Path:
    path = Path(path)
    dataset.to_frame().to_csv(path, index=False, float_format='%.17g')
    return path
