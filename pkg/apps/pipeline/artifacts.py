"""
Versioned JSON artifacts for models, bounds and funnels, plus run metadata.

Artifacts hold no timestamps, so reruns with the same inputs write identical
bytes; timestamps go to metadata.json only.
"""

from pathlib import Path
import json
import logging

from django.core.serializers.json import DjangoJSONEncoder
from django.utils import timezone

from apps.bounds.envelopes import BoundSet
from apps.common.boxes import StateBox
from apps.common.exceptions import ConfigError
from apps.funnel.synthesis import FunnelSpec
from apps.gp.data import Dataset
from apps.gp.kernels import KernelParams
from apps.gp.regression import GPModel, fit_posterior

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODEL_FORMAT = 'gpreach-model'
BOUNDS_FORMAT = 'gpreach-bounds'
FUNNEL_FORMAT = 'gpreach-funnel'

MODEL_FILE = 'model.json'
BOUNDS_FILE = 'bounds.json'
FUNNEL_FILE = 'funnel.json'
METADATA_FILE = 'metadata.json'
CONFIG_FILE = 'config.ini'


def write_json(document: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def read_artifact(path, expected_format: str) -> dict:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise ConfigError(f"Artifact not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Artifact {path} is not valid JSON: {e}") from e
    if document.get('format') != expected_format:
        raise ConfigError(f"{path} is not a {expected_format} file (format={document.get('format')!r})")
    if document.get('version') != FORMAT_VERSION:
        raise ConfigError(f"{path} has unsupported version {document.get('version')!r}")
    return document


def save_model(model: GPModel, path, report: dict = None) -> Path:
    document = {
        'format': MODEL_FORMAT,
        'version': FORMAT_VERSION,
        'dataset': {
            'inputs': model.data.inputs.tolist(),
            'targets': model.data.targets.tolist(),
            'noise_std': model.data.noise_std,
        },
        'kernel': model.params.to_dict(),
        'jitter': model.jitter,
        'state_box': model.state_box.to_dict() if model.state_box is not None else None,
        'report': report or {},
    }
    return write_json(document, path)


def load_model(path) -> GPModel:
    """Rebuild the posterior from the stored dataset and hyperparameters."""
    document = read_artifact(path, MODEL_FORMAT)
    try:
        data = Dataset(document['dataset']['inputs'], document['dataset']['targets'],
                       document['dataset']['noise_std'])
        params = KernelParams.from_dict(document['kernel'])
        box = document.get('state_box')
        box = StateBox.from_dict(box) if box else None
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Model file {path} is malformed: {e}") from e
    return fit_posterior(data, params, box, document.get('jitter', 0.0))


def model_report(path) -> dict:
    return read_artifact(path, MODEL_FORMAT).get('report', {})


def save_bounds(bound: BoundSet, path, report: dict = None) -> Path:
    document = {'format': BOUNDS_FORMAT, 'version': FORMAT_VERSION, 'bound': bound.to_dict(),
                'report': report or {}}
    return write_json(document, path)


def load_bounds(path) -> BoundSet:
    document = read_artifact(path, BOUNDS_FORMAT)
    try:
        return BoundSet.from_dict(document['bound'])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Bounds file {path} is malformed: {e}") from e


def save_funnel(spec: FunnelSpec, path, start: StateBox, goal: StateBox,
                state_box: StateBox) -> Path:
    document = {
        'format': FUNNEL_FORMAT,
        'version': FORMAT_VERSION,
        'funnel': spec.to_dict(),
        'start': start.to_dict(),
        'goal': goal.to_dict(),
        'state_box': state_box.to_dict(),
    }
    return write_json(document, path)


def load_funnel(path) -> FunnelSpec:
    document = read_artifact(path, FUNNEL_FORMAT)
    try:
        return FunnelSpec.from_dict(document['funnel'])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Funnel file {path} is malformed: {e}") from e


def load_funnel_boxes(path):
    """Start, goal and state boxes stored next to the funnel."""
    document = read_artifact(path, FUNNEL_FORMAT)
    return tuple(StateBox.from_dict(document[key]) for key in ('start', 'goal', 'state_box'))


def write_metadata(run_dir, command: str, **extra) -> Path:
    path = Path(run_dir) / METADATA_FILE
    metadata = {}
    if path.exists():
        try:
            metadata = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError:
            logger.warning(f"Overwriting unreadable metadata file {path}")
    # one entry per command, latest run last
    history = [entry for entry in metadata.get('commands', []) if entry.get('command') != command]
    history.append({'command': command, 'finished': timezone.now(), **extra})
    metadata['commands'] = history
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metadata, indent=2, cls=DjangoJSONEncoder) + '\n', encoding='utf-8')
    return path
