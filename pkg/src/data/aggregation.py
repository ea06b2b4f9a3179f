__all__ = ['logger', 'DEFAULT_MAX_DEPTH', 'SOURCE_KINDS', 'ENVELOPE_KEYS', 'CONTEXT_NOTES', 'DEFAULT_EXPLANATIONS', 'AggregatedLog',
           'kv_aggregate', 'merge_tables', 'aggregate_entity', 'attach_context', 'serialize_aggregated',
           'load_aggregated', 'count_tokens', 'token_reduction']

# Cell
import json
import logging
import re
from dataclasses import dataclass, replace
from typing import Any, Collection, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Union

from fastcore.foundation import patch

from ..core.exceptions import RecursionLimitError
from ..core.records import EntityKey, NestedRecord, Scalar, canonical_json, is_scalar, scalar_from_repr, scalar_repr

logger = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 128
SOURCE_KINDS = ('audit', 'network', 'provenance')
# metadata keys around the table of a serialized aggregate
ENVELOPE_KEYS = ('contextNote', 'entity', 'source', 'sourceCount')

CONTEXT_NOTES = {
    'audit': (
        'The table aggregates Kubernetes API server audit events at the Metadata level. Each key is '
        'an audit event field name and its values are every distinct value observed for that field, '
        'merged across nesting levels. "verb", "resource" and "apiGroup" describe requested actions; '
        '"username" identifies the caller; "observedPermission" lists apiGroup|resource|verb triples '
        'of requests that were allowed.'),
    'network': (
        'The table aggregates Hubble flow records of one Pod. Endpoint labels prefixed with "k8s:" '
        'are Kubernetes labels; peers labelled "reserved:<identity>" are Cilium reserved identities: '
        'world (any endpoint outside the cluster), host (the local node), remote-node (another '
        'cluster node), kube-apiserver (the API server), health and init. "traffic_direction" '
        'is relative to the Pod; "observedFlow" lists direction|peer|port|protocol tuples of '
        'forwarded request flows.'),
    'provenance': (
        'The table aggregates provenance records following the SPADE data model. Vertices are '
        'Processes (running programs), Artifacts (files, network sockets, pipes, memory) and Agents '
        '(users and groups); edges are events such as Used (a process read an artifact), '
        'WasGeneratedBy (a process wrote an artifact), WasTriggeredBy (a process forked or executed '
        'another) and WasControlledBy. Keys prefixed with "src_" describe the edge source vertex and '
        'keys prefixed with "dst_" the destination vertex; "operation" names the system call.'),
}
# preamble attached when no explicit choice is made
DEFAULT_EXPLANATIONS = {'audit': False, 'network': True, 'provenance': True}

# Cell
@dataclass(frozen=True)
class AggregatedLog:
    """Per-entity key -> value-set table (AAL, ANL or APL).

    Values are stored as canonical scalar renderings so that `true`, `1`
    and `1.0` remain distinct members of a set.
    """
    entity: EntityKey
    table: Dict[str, FrozenSet[str]]
    source_count: int = 0
    context_note: Optional[str] = None
    source: Optional[str] = None

# Cell
@patch
def values(self: AggregatedLog, key: str) -> List[Scalar]:
    """Decoded values of `key` in serialization order; empty when absent."""
    return [scalar_from_repr(r) for r in sorted(self.table.get(key, ()))]

@patch
def to_dict(self: AggregatedLog) -> Dict[str, Any]:
    d = {}
    if self.context_note:
        d['contextNote'] = self.context_note
    d['entity'] = self.entity.to_dict()
    if self.source:
        d['source'] = self.source
    d['sourceCount'] = self.source_count
    d['table'] = {key: self.values(key) for key in sorted(self.table)}
    return d

# Cell
def _add(table: Dict[str, Set[str]], key: Any, value: Scalar) -> None:
    table.setdefault(str(key), set()).add(scalar_repr(value))


def _aggregate(node: NestedRecord, table: Dict[str, Set[str]], parent_key: Optional[str],
               depth: int, max_depth: int, exclude: Collection[str], list_scalars: bool) -> None:
    if depth > max_depth:
        raise RecursionLimitError(f'Record nesting exceeds {max_depth} levels')
    if isinstance(node, dict):
        for key, value in node.items():
            if key in exclude:
                continue
            if is_scalar(value):
                _add(table, key, value)
            else:
                _aggregate(value, table, key, depth + 1, max_depth, exclude, list_scalars)
    elif isinstance(node, (list, tuple)):
        for item in node:
            if is_scalar(item):
                # list items belong to the key holding the list
                if list_scalars and parent_key is not None:
                    _add(table, parent_key, item)
            else:
                _aggregate(item, table, parent_key, depth + 1, max_depth, exclude, list_scalars)


def _is_envelope(record: NestedRecord) -> bool:
    return isinstance(record, dict) and isinstance(record.get('table'), dict) \
           and isinstance(record.get('entity'), dict) and set(record) <= {'table', *ENVELOPE_KEYS}


def kv_aggregate(record: NestedRecord, table: Optional[Dict[str, Set[str]]] = None,
                 max_depth: int = DEFAULT_MAX_DEPTH, exclude_keys: Collection[str] = (),
                 list_scalars: bool = True) -> Dict[str, Set[str]]:
    """Recursive key -> value-set aggregation of one nested record.

    Parameters
    ----------
    record: NestedRecord
        Parsed JSON value.
    table: dict, optional
        Accumulator updated in place; a new one is created when omitted.
    max_depth: int
        Nesting depth beyond which `RecursionLimitError` is raised.
    exclude_keys: collection of str
        Keys skipped entirely, together with their subtrees.
    list_scalars: bool
        File scalars found inside lists under the key holding the list.
        False drops them, as a literal reading of the recursion does.

    Returns
    -------
    table: dict
        Key name -> set of canonical scalar renderings.

    Notes
    -----
    [1] Keys are indexed by name only: a key appearing at several depths
        collects the values of every occurrence into one set.
    [2] Scalars inside lists are filed under the key holding the list;
        no index keys are introduced.
    [3] A parsed serialized aggregate contributes its table only; the
        envelope keys (`ENVELOPE_KEYS`) describe the aggregate, not the events.
    """
    table = {} if table is None else table
    if _is_envelope(record):
        record = record['table']
    _aggregate(record, table, None, 0, max_depth, frozenset(exclude_keys), list_scalars)
    return table


def merge_tables(a: Dict[str, Collection[str]], b: Dict[str, Collection[str]]) -> Dict[str, Set[str]]:
    """Key-wise union of two aggregation tables."""
    merged = {key: set(values) for key, values in a.items()}
    for key, values in b.items():
        merged.setdefault(key, set()).update(values)
    return merged

# Cell
def aggregate_entity(events: Iterable[NestedRecord], entity: EntityKey, source: Optional[str] = None,
                     max_depth: int = DEFAULT_MAX_DEPTH, exclude_keys: Collection[str] = (),
                     list_scalars: bool = True) -> AggregatedLog:
    table, count = {}, 0
    for event in events:
        kv_aggregate(event, table, max_depth=max_depth, exclude_keys=exclude_keys, list_scalars=list_scalars)
        count += 1
    return AggregatedLog(entity=entity, table={k: frozenset(v) for k, v in table.items()},
                         source_count=count, source=source)


def attach_context(agg: AggregatedLog, source_kind: str, explanations: Optional[bool] = None) -> AggregatedLog:
    """Sets the explanatory preamble of a source kind.

    `explanations=None` applies the per-kind default (provenance and network
    on, audit off); True forces the preamble and False removes it.
    """
    if source_kind not in SOURCE_KINDS:
        raise ValueError(f'Unknown source kind {source_kind}')
    enabled = DEFAULT_EXPLANATIONS[source_kind] if explanations is None else explanations
    return replace(agg, context_note=CONTEXT_NOTES[source_kind] if enabled else None, source=source_kind)


def serialize_aggregated(agg: AggregatedLog) -> str:
    """Deterministic JSON text; the context note, when present, comes first."""
    return json.dumps(agg.to_dict(), indent=2, ensure_ascii=False)


def load_aggregated(text: str) -> AggregatedLog:
    d = json.loads(text)
    if not isinstance(d, dict) or 'entity' not in d or not isinstance(d.get('table'), dict):
        raise ValueError('Text is not a serialized aggregated log')
    table = {key: frozenset(scalar_repr(v) for v in values) for key, values in d['table'].items()}
    return AggregatedLog(entity=EntityKey.from_dict(d['entity']), table=table,
                         source_count=int(d.get('sourceCount', 0)), context_note=d.get('contextNote'),
                         source=d.get('source'))

# Cell
TOKEN_PATTERN = re.compile(r'\w+|[^\w\s]')


def count_tokens(text: str) -> int:
    """Word runs and single punctuation characters."""
    return len(TOKEN_PATTERN.findall(text))


def token_reduction(raw_events: Sequence[Union[str, NestedRecord]], aggregated: Union[str, AggregatedLog]) -> float:
    """1 - tokens(aggregate) / tokens(raw events), clipped to [0, 1]."""
    raw = '\n'.join(e if isinstance(e, str) else canonical_json(e) for e in raw_events)
    raw_tokens = count_tokens(raw)
    if raw_tokens == 0:
        return 0.0
    text = aggregated if isinstance(aggregated, str) else serialize_aggregated(aggregated)
    return min(1.0, max(0.0, 1.0 - count_tokens(text) / raw_tokens))
