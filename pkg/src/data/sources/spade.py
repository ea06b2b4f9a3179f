__all__ = ['VERTEX_KINDS', 'Vertex', 'Edge', 'ProvenanceGraph', 'parse_spade_graph', 'edge_timestamp']

# Cell
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Union

import pandas as pd
from fastcore.foundation import patch

from ...core.exceptions import DanglingEdgeError, ProvenanceSyntaxError
from .utils import parse_timestamp

logger = logging.getLogger(__name__)

# OPM and PROV type names emitted by SPADE storages
VERTEX_KINDS = {'Process': 'process', 'Activity': 'process',
                'Artifact': 'artifact', 'Entity': 'artifact',
                'Agent': 'agent'}

# Cell
@dataclass(frozen=True)
class Vertex:
    id: str
    kind: str
    annotations: Dict[str, Any]


@dataclass(frozen=True)
class Edge:
    from_id: str
    to_id: str
    event_type: str
    annotations: Dict[str, Any]
    type: str = ''


@dataclass
class ProvenanceGraph:
    """Vertices and edges of a provenance graph.

    Construction rejects duplicate vertex ids and edges whose endpoints
    are not vertices of the graph.
    """
    vertices: List[Vertex]
    edges: List[Edge]
    index: Dict[str, Vertex] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {}
        for vertex in self.vertices:
            if vertex.id in self.index:
                raise ProvenanceSyntaxError(f'Duplicate vertex id {vertex.id}')
            self.index[vertex.id] = vertex
        for edge in self.edges:
            for endpoint in (edge.from_id, edge.to_id):
                if endpoint not in self.index:
                    raise DanglingEdgeError(edge.from_id, edge.to_id, endpoint)

# Cell
@patch
def vertex(self: ProvenanceGraph, vertex_id: str) -> Vertex:
    return self.index[vertex_id]

@patch
def endpoints(self: ProvenanceGraph, edge: Edge):
    return self.index[edge.from_id], self.index[edge.to_id]

# Cell
def _load_objects(text: str) -> List[Any]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = None
    except RecursionError as e:
        raise ProvenanceSyntaxError('Provenance document is nested too deeply') from e

    if data is not None:
        if isinstance(data, dict) and ('vertices' in data or 'edges' in data):
            parts = [data.get(name) or [] for name in ('vertices', 'edges')]
            if not all(isinstance(part, list) for part in parts):
                raise ProvenanceSyntaxError('`vertices` and `edges` must be arrays')
            return parts[0] + parts[1]
        return data if isinstance(data, list) else [data]

    # one object per line, optionally wrapped in [ ... ] with trailing commas
    objects = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip().rstrip(',')
        if not line or line in ('[', ']'):
            continue
        try:
            objects.append(json.loads(line))
        except (json.JSONDecodeError, RecursionError) as e:
            raise ProvenanceSyntaxError(f'Line {lineno} is not valid JSON: {e}') from e
    return objects


def parse_spade_graph(text: Union[str, bytes]) -> ProvenanceGraph:
    """Parses SPADE's JSON graph export.

    Parameters
    ----------
    text: str or bytes
        Either a JSON array of vertex/edge objects, an object with `vertices`
        and `edges` arrays, or one object per line. Edges are the objects
        carrying `from` and `to`; the `type` field discriminates vertex kinds.

    Returns
    -------
    graph: ProvenanceGraph
        Annotations are preserved verbatim. The edge event type is the
        `operation` annotation when present, else the edge type.
    """
    if isinstance(text, bytes):
        text = text.decode('utf-8', errors='replace')
    vertices, edges = [], []
    for obj in _load_objects(text):
        if not isinstance(obj, dict):
            raise ProvenanceSyntaxError(f'Graph element is a {type(obj).__name__}, not an object')
        annotations = obj.get('annotations') or {}
        if not isinstance(annotations, dict):
            raise ProvenanceSyntaxError('Annotations must be an object')
        kind = str(obj.get('type') or '')
        if 'from' in obj and 'to' in obj:
            event_type = str(annotations.get('operation') or kind or 'unknown')
            edges.append(Edge(str(obj['from']), str(obj['to']), event_type, annotations, kind))
        elif kind in VERTEX_KINDS:
            if obj.get('id') is None:
                raise ProvenanceSyntaxError(f'{kind} vertex without id')
            vertices.append(Vertex(str(obj['id']), VERTEX_KINDS[kind], annotations))
        else:
            raise ProvenanceSyntaxError(f'Unknown graph element type {kind!r}')
    logger.info(f'Parsed provenance graph with {len(vertices)} vertices and {len(edges)} edges')
    return ProvenanceGraph(vertices, edges)

# Cell
def edge_timestamp(annotations: Dict[str, Any]) -> pd.Timestamp:
    """`time` annotation (epoch seconds or RFC3339) as a UTC timestamp."""
    value = annotations.get('time')
    if value is None:
        raise ValueError('provenance record has no time annotation')
    try:
        return pd.Timestamp(float(value), unit='s', tz='UTC')
    except (TypeError, ValueError):
        return parse_timestamp(value)
