__all__ = ['logger', 'CONVERGENCE_THRESHOLD', 'SimilarityReport', 'segment_bounds', 'convergence_analysis']

# Cell
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Collection, Dict, List, Optional, Sequence

import pandas as pd
from tqdm import tqdm

from ..core.records import EntityKey
from ..data.aggregation import AggregatedLog, kv_aggregate, serialize_aggregated
from ..data.grouping import event_record
from .similarity import cosine, dice, overlap, tokenize

logger = logging.getLogger(__name__)

CONVERGENCE_THRESHOLD = 0.98
MEASURES = ('cosine', 'overlap', 'dice')

# Cell
@dataclass
class SimilarityReport:
    """Similarity of consecutive cumulative segments of one log type."""
    source: str
    n_events: int
    n_segments: int
    threshold: float
    pairs: List[Dict[str, Any]] = field(default_factory=list)
    convergence_index: Optional[int] = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.pairs, columns=['segment', 'next_segment', 'events', *MEASURES])

    def to_dict(self) -> Dict[str, Any]:
        return {'source': self.source, 'nEvents': self.n_events, 'nSegments': self.n_segments,
                'threshold': self.threshold, 'convergenceIndex': self.convergence_index,
                'pairs': self.pairs}


def segment_bounds(n_events: int, n_segments: int) -> List[int]:
    """Segment i holds the first ceil(i * n_events / n_segments) events."""
    assert n_segments >= 1, 'n_segments must be positive'
    return [-(-i * n_events // n_segments) for i in range(1, n_segments + 1)]

# Cell
def _segment_text(tables: Dict[EntityKey, Dict[str, set]], counts: Dict[EntityKey, int]) -> str:
    aggregates = [AggregatedLog(entity=key, table={k: frozenset(v) for k, v in table.items()},
                                source_count=counts[key])
                  for key, table in sorted(tables.items())]
    return '\n'.join(serialize_aggregated(a) for a in aggregates)


def convergence_analysis(events: Sequence[Any], n_segments: int = 100,
                         entity_of: Optional[Callable[[Any], EntityKey]] = None, source: str = 'audit',
                         threshold: float = CONVERGENCE_THRESHOLD,
                         exclude_keys: Collection[str] = (), list_scalars: bool = True) -> SimilarityReport:
    """Aggregates cumulative segments of a time-ordered stream and compares neighbours.

    Parameters
    ----------
    events: sequence
        Time-ordered typed events or raw records.
    n_segments: int
        Number of cumulative segments.
    entity_of: callable, optional
        Maps an event to its entity; None aggregates the whole stream as one entity.
    source: str
        Log type the report describes.
    threshold: float
        Similarity all three measures must reach at the convergence index.
    exclude_keys: collection of str
        Keys dropped before aggregation.
    list_scalars: bool
        Keep scalars found inside lists (see `kv_aggregate`).

    Returns
    -------
    report: SimilarityReport
        One row per consecutive pair; `convergence_index` is the first
        segment whose pair with the next reaches the threshold on every measure.
    """
    bounds = segment_bounds(len(events), n_segments)
    whole = EntityKey('event', source)
    tables, counts = {}, {}
    texts, done = [], 0
    for bound in tqdm(bounds, desc=f'{source} segments'):
        for event in events[done:bound]:
            key = entity_of(event) if entity_of is not None else whole
            record = event if isinstance(event, dict) else event_record(event)
            kv_aggregate(record, tables.setdefault(key, {}), exclude_keys=exclude_keys, list_scalars=list_scalars)
            counts[key] = counts.get(key, 0) + 1
        done = bound
        texts.append(tokenize(_segment_text(tables, counts)))

    report = SimilarityReport(source=source, n_events=len(events), n_segments=n_segments, threshold=threshold)
    for i in range(1, len(texts)):
        a, b = texts[i - 1], texts[i]
        pair = {'segment': i, 'next_segment': i + 1, 'events': bounds[i],
                'cosine': cosine(a, b), 'overlap': overlap(a, b), 'dice': dice(a, b)}
        report.pairs.append(pair)
        if report.convergence_index is None and all(pair[m] >= threshold for m in MEASURES):
            report.convergence_index = i
    logger.info(f'{source}: convergence index {report.convergence_index} of {n_segments} segments')
    return report
