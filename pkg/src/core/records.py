__all__ = ['NestedRecord', 'Scalar', 'UNATTRIBUTED', 'ENTITY_KINDS', 'is_scalar', 'scalar_repr', 'scalar_from_repr',
           'canonicalize', 'canonical_json', 'content_hash', 'EntityKey', 'MicroserviceInfo']

# Cell
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Tuple, Union

NestedRecord = Union[None, bool, int, float, str, List[Any], Dict[str, Any]]
Scalar = Union[None, bool, int, float, str]

UNATTRIBUTED = 'UNATTRIBUTED'
ENTITY_KINDS = ('microservice', 'user', 'pod', 'event')

# Cell
def is_scalar(value: Any) -> bool:
    return value is None or isinstance(value, (bool, int, float, str))


def scalar_repr(value: Scalar) -> str:
    """Canonical rendering of a scalar.

    JSON rendering keeps `true`, `1` and `1.0` distinct and floats
    use the shortest round-trip representation.
    """
    return json.dumps(value, ensure_ascii=False, allow_nan=True)


def scalar_from_repr(text: str) -> Scalar:
    return json.loads(text)

# Cell
def canonicalize(value: NestedRecord) -> NestedRecord:
    """Returns a copy with map keys sorted at every level; list order is kept."""
    if isinstance(value, dict):
        return {str(k): canonicalize(value[k]) for k in sorted(value, key=str)}
    if isinstance(value, (list, tuple)):
        return [canonicalize(v) for v in value]
    return value


def canonical_json(value: NestedRecord, indent: int = None) -> str:
    separators = (',', ':') if indent is None else (',', ': ')
    return json.dumps(value, sort_keys=True, ensure_ascii=False,
                      separators=separators, indent=indent, default=str)


def content_hash(value: NestedRecord) -> str:
    """sha256 of the canonical JSON text, used for sub-documents and prompt keys."""
    return hashlib.sha256(canonical_json(value).encode('utf-8')).hexdigest()

# Cell
@dataclass(frozen=True, order=True)
class EntityKey:
    """Grouping key of one aggregated log.

    Args:
        kind (str): one of 'microservice', 'user', 'pod', 'event'.
        id (str): entity name, `UNATTRIBUTED` when no owner was found.
    """
    kind: str
    id: str

    def __post_init__(self):
        if self.kind not in ENTITY_KINDS:
            raise ValueError(f'Unknown entity kind {self.kind}')

    def __str__(self):
        return f'{self.kind}:{self.id}'

    @property
    def slug(self) -> str:
        """File-system safe name."""
        return re.sub(r'[^A-Za-z0-9._-]+', '_', self.id) or '_'

    def to_dict(self) -> Dict[str, str]:
        return {'kind': self.kind, 'id': self.id}

    @classmethod
    def from_dict(cls, d: Dict[str, str]) -> 'EntityKey':
        return cls(kind=d['kind'], id=d['id'])

# Cell
@dataclass(frozen=True)
class MicroserviceInfo:
    """Offline description of one microservice taken from a cluster snapshot."""
    name: str
    labels: Tuple[Tuple[str, str], ...] = ()
    ports: FrozenSet[Tuple[int, str]] = field(default_factory=frozenset)
    images: FrozenSet[str] = field(default_factory=frozenset)
    service_ips: FrozenSet[str] = field(default_factory=frozenset)
    executable_paths: FrozenSet[str] = field(default_factory=frozenset)

    @property
    def label_map(self) -> Dict[str, str]:
        return dict(self.labels)
