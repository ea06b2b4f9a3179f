__all__ = ['InputsConfig', 'ChainConfig', 'AggregationConfig', 'EvaluationConfig', 'PipelineConfig', 'load_config',
           'config_from_dict']

# Cell
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from ..backends.base import BackendConfig
from ..core.exceptions import ConfigError
from ..data.aggregation import DEFAULT_MAX_DEPTH

logger = logging.getLogger(__name__)

# Cell
@dataclass
class InputsConfig:
    """
    Args:
        audit (List[str]): audit log files or directories (`*.audit.jsonl[.gz]`).
        flows (List[str]): Hubble flow exports (`*.flows.jsonl[.gz]`).
        spade (List[str]): SPADE graph exports (`*.spade.json[.gz]`).
        cluster_snapshot (str): microservice snapshot used for provenance association.
        manifests (List[str]): manifest files or directories.
        aggregates (str): directory of aggregates written by `aggregate`; defaults to `<output_dir>/aggregates`.
    """
    audit: List[str] = field(default_factory=list)
    flows: List[str] = field(default_factory=list)
    spade: List[str] = field(default_factory=list)
    cluster_snapshot: Optional[str] = None
    manifests: List[str] = field(default_factory=list)
    aggregates: Optional[str] = None


@dataclass
class ChainConfig:
    order: Optional[str] = None
    include_match_step: bool = True
    include_explanations: Optional[bool] = None
    prompt_mode: str = 'chain'
    iterate: bool = False
    max_iter: int = 5
    max_retries: int = 2
    template_dir: Optional[str] = None


@dataclass
class AggregationConfig:
    max_depth: int = DEFAULT_MAX_DEPTH
    exclude_keys: List[str] = field(default_factory=list)
    list_scalars: bool = True
    fatal_threshold: float = 0.5
    explanations: Optional[bool] = None


@dataclass
class EvaluationConfig:
    taxonomy: Optional[str] = None
    seed: int = 0
    n_segments: int = 100
    threshold: float = 0.98
    group_entities: bool = False


@dataclass
class PipelineConfig:
    inputs: InputsConfig = field(default_factory=InputsConfig)
    output_dir: str = 'results'
    backend: BackendConfig = field(default_factory=BackendConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    @property
    def aggregates_dir(self) -> Path:
        return Path(self.inputs.aggregates) if self.inputs.aggregates else Path(self.output_dir) / 'aggregates'

# Cell
SECTIONS = {'inputs': InputsConfig, 'backend': BackendConfig, 'chain': ChainConfig,
            'aggregation': AggregationConfig, 'evaluation': EvaluationConfig}
LIST_PATHS = ('audit', 'flows', 'spade', 'manifests')


def _section(cls, d: Any, name: str):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f'Section {name} must be a mapping')
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f'Unknown keys in {name}: {unknown}')
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f'Invalid {name} section: {e}') from e


def _resolve(path: Optional[str], base: Path) -> Optional[str]:
    if path is None:
        return None
    p = Path(path).expanduser()
    return str(p if p.is_absolute() else base / p)


def config_from_dict(d: Dict[str, Any], base_dir: Union[str, Path] = '.', check_paths: bool = True) -> PipelineConfig:
    """Builds a PipelineConfig; relative paths resolve against `base_dir`.

    Raises `ConfigError` on unknown keys, bad values or missing input paths.
    """
    if not isinstance(d, dict):
        raise ConfigError('Configuration must be a mapping')
    base = Path(base_dir)
    unknown = sorted(set(d) - set(SECTIONS) - {'output_dir'})
    if unknown:
        raise ConfigError(f'Unknown configuration keys: {unknown}')

    sections = {name: _section(cls, d.get(name), name) for name, cls in SECTIONS.items()}
    inputs = sections['inputs']
    for name in LIST_PATHS:
        value = getattr(inputs, name)
        if isinstance(value, str):
            value = [value]
        setattr(inputs, name, [_resolve(p, base) for p in value or []])
    inputs.cluster_snapshot = _resolve(inputs.cluster_snapshot, base)
    inputs.aggregates = _resolve(inputs.aggregates, base)

    backend = sections['backend']
    backend.record_dir = _resolve(backend.record_dir, base)
    backend.replay_dir = _resolve(backend.replay_dir, base)
    sections['chain'].template_dir = _resolve(sections['chain'].template_dir, base)
    sections['evaluation'].taxonomy = _resolve(sections['evaluation'].taxonomy, base)

    config = PipelineConfig(output_dir=_resolve(d.get('output_dir', 'results'), base), **sections)
    if check_paths:
        missing = [p for name in LIST_PATHS for p in getattr(inputs, name) if not Path(p).exists()]
        missing += [p for p in (inputs.cluster_snapshot, backend.replay_dir, config.chain.template_dir,
                                config.evaluation.taxonomy) if p is not None and not Path(p).exists()]
        if missing:
            raise ConfigError(f'Configured paths do not exist: {missing}')
    return config


def load_config(path: Union[str, Path]) -> PipelineConfig:
    """Reads a YAML or JSON pipeline configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f'Configuration file {path} does not exist')
    try:
        d = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f'Cannot parse {path}: {e}') from e
    config = config_from_dict(d or {}, base_dir=path.parent)
    logger.info(f'Loaded configuration {path}')
    return config
