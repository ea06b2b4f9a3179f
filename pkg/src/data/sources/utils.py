__all__ = ['logger', 'Info', 'AuditSource', 'NetworkSource', 'ProvenanceSource', 'SourceInfo', 'open_text',
           'to_lines', 'discover_inputs', 'parse_timestamp', 'parse_json_lines']

# Cell
import gzip
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import pandas as pd

from ...core.exceptions import FatalFormatError

logger = logging.getLogger(__name__)

# Cell
@dataclass
class Info:
    """
    Info Dataclass of log sources.
    Args:
        groups (Tuple): Tuple of str groups
        class_groups (Tuple): Tuple of dataclasses.
    """
    groups: Tuple[str]
    class_groups: Tuple[dataclass]

    def get_group(self, group: str):
        """Gets dataclass of group."""
        if group not in self.groups:
            raise Exception(f'Unknown group {group}')

        return self.class_groups[self.groups.index(group)]

    def __getitem__(self, group: str):
        return self.get_group(group)

    def __iter__(self):
        for group in self.groups:
            yield group, self.get_group(group)

# Cell
@dataclass
class AuditSource:
    name: str = 'audit'
    suffix: str = '.audit.jsonl'
    scheme: str = 'by_microservice_user'
    label: str = 'aal'

@dataclass
class NetworkSource:
    name: str = 'network'
    suffix: str = '.flows.jsonl'
    scheme: str = 'by_pod'
    label: str = 'anl'

@dataclass
class ProvenanceSource:
    name: str = 'provenance'
    suffix: str = '.spade.json'
    scheme: str = 'by_event'
    label: str = 'apl'

# Cell
SourceInfo = Info(groups=('audit', 'network', 'provenance'),
                  class_groups=(AuditSource, NetworkSource, ProvenanceSource))

# Cell
def open_text(path: Union[str, Path]) -> io.TextIOBase:
    """Opens a log file as text, transparently decompressing `.gz`."""
    path = Path(path)
    if path.suffix == '.gz':
        return gzip.open(path, 'rt', encoding='utf-8', errors='replace')
    return open(path, 'r', encoding='utf-8', errors='replace')


def to_lines(source: Union[str, bytes, Iterable[Union[str, bytes]]]) -> Iterator[str]:
    """Text lines from raw text, raw bytes or an iterable of lines."""
    if isinstance(source, bytes):
        source = source.decode('utf-8', errors='replace')
    if isinstance(source, str):
        yield from source.splitlines()
        return
    for line in source:
        if isinstance(line, bytes):
            line = line.decode('utf-8', errors='replace')
        yield line


def discover_inputs(paths: Sequence[Union[str, Path]], suffix: str) -> List[Path]:
    """Files with `suffix` (or `suffix.gz`) under each directory, plus explicit files."""
    found = []
    for path in paths:
        path = Path(path)
        if path.is_dir():
            found.extend(sorted(p for p in path.iterdir()
                                if p.name.endswith(suffix) or p.name.endswith(f'{suffix}.gz')))
        elif path.exists():
            found.append(path)
        else:
            logger.warning(f'Input {path} does not exist')
    return found

# Cell
def parse_timestamp(value: Any) -> pd.Timestamp:
    """RFC3339 text to a UTC timestamp. Raises ValueError on anything else."""
    if not isinstance(value, str) or not value:
        raise ValueError(f'Missing or non-text timestamp {value!r}')
    ts = pd.Timestamp(value)
    if pd.isna(ts):
        raise ValueError(f'Unparseable timestamp {value!r}')
    return ts.tz_localize('UTC') if ts.tzinfo is None else ts.tz_convert('UTC')


PARSE_ERRORS = (ValueError, TypeError, KeyError, AttributeError, OverflowError, RecursionError)


def parse_json_lines(lines: Union[str, bytes, Iterable[Union[str, bytes]]],
                     extract: Callable[[Dict[str, Any]], Any],
                     source: str,
                     fatal_threshold: float = 0.5) -> List[Any]:
    """Parses line-delimited JSON objects with `extract`.

    Parameters
    ----------
    lines: str, bytes or iterable of lines
        Raw stream. Empty lines are ignored.
    extract: callable
        Maps one JSON object to a typed event; raises one of the parse
        errors when the object violates the event's invariants.
    source: str
        Name used in log messages and errors.
    fatal_threshold: float
        Fraction of failed lines above which the stream is rejected.

    Returns
    -------
    events: list
        One event per successfully parsed line, in stream order.
    """
    events, failed, total = [], 0, 0
    for line in to_lines(lines):
        line = line.strip()
        if not line:
            continue
        total += 1
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError('line is not a JSON object')
            events.append(extract(record))
        except PARSE_ERRORS as e:
            failed += 1
            logger.debug(f'{source}: skipped line {total}: {e}')

    if failed:
        logger.warning(f'{source}: skipped {failed}/{total} unparseable lines')
    if total and failed / total > fatal_threshold:
        raise FatalFormatError(source, failed, total, fatal_threshold)
    return events
