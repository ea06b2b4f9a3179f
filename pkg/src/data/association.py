__all__ = ['logger', 'IGNORED_ANNOTATIONS', 'MicroserviceIndex', 'AssociatedRecord', 'service_tokens', 'build_index',
           'annotation_tokens', 'associate']

# Cell
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Set

from ..core.records import MicroserviceInfo
from .sources.spade import ProvenanceGraph

logger = logging.getLogger(__name__)

# numeric identifiers that would collide with port tokens
IGNORED_ANNOTATIONS = frozenset({
    'pid', 'ppid', 'tgid', 'uid', 'euid', 'suid', 'fsuid', 'gid', 'egid', 'sgid', 'fsgid',
    'fd', 'time', 'seen time', 'start time', 'event id', 'epoch', 'version', 'size',
    'inode', 'device', 'mode', 'flags', 'count', 'offset', 'length', 'return value',
    'returnvalue', 'id', 'sequence', 'source'})
TOKEN_SPLIT = re.compile(r'[\s=,;"\'()\[\]{}<>]+')

# Cell
@dataclass(frozen=True)
class MicroserviceIndex:
    """Lowercased token -> names of the microservices exhibiting it."""
    entries: Dict[str, FrozenSet[str]]

    @property
    def services(self) -> Set[str]:
        return set().union(*self.entries.values()) if self.entries else set()

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class AssociatedRecord:
    microservice: str
    event_type: str
    record: Dict[str, Any]

# Cell
def service_tokens(service: MicroserviceInfo) -> Set[str]:
    tokens = {service.name}
    for key, value in service.labels:
        tokens.update({f'{key}={value}', str(value)})
    for port, protocol in service.ports:
        tokens.add(f'{port}/{protocol}')
        tokens.update(f'{ip}:{port}' for ip in service.service_ips)
    for image in service.images:
        repository = re.split(r'[@]', image)[0]
        if ':' in repository.rsplit('/', 1)[-1]:
            repository = repository.rsplit(':', 1)[0]
        tokens.update({image, repository, repository.rsplit('/', 1)[-1]})
    for path in service.executable_paths:
        tokens.update({path, path.rstrip('/').rsplit('/', 1)[-1]})
    return {t.lower() for t in tokens if t}


def build_index(services: Iterable[MicroserviceInfo]) -> MicroserviceIndex:
    """Token index over service names, labels, ports, images and executables.

    One token may map to several services.
    """
    entries, names = defaultdict(set), set()
    for service in services:
        if service.name in names:
            raise ValueError(f'Duplicate microservice name {service.name}')
        names.add(service.name)
        for token in service_tokens(service):
            entries[token].add(service.name)
    return MicroserviceIndex({token: frozenset(s) for token, s in entries.items()})

# Cell
def annotation_tokens(annotations: Dict[str, Any]) -> Set[str]:
    """Candidate tokens of one vertex or edge: whole values, words, path basenames,
    `port/proto` for numbers and `ip:port` for socket endpoints."""
    tokens = set()
    for key, value in annotations.items():
        if value is None or str(key).lower() in IGNORED_ANNOTATIONS:
            continue
        text = str(value).lower()
        tokens.add(text)
        for part in TOKEN_SPLIT.split(text):
            if not part:
                continue
            tokens.add(part)
            if '/' in part:
                tokens.add(part.rstrip('/').rsplit('/', 1)[-1])
            if part.isdigit():
                tokens.update(f'{part}/{protocol}' for protocol in ('tcp', 'udp', 'sctp'))
    for side in ('remote', 'local'):
        address, port = annotations.get(f'{side} address'), annotations.get(f'{side} port')
        if address and port:
            tokens.add(f'{address}:{port}'.lower())
    tokens.discard('')
    return tokens


def associate(graph: ProvenanceGraph, index: MicroserviceIndex) -> List[AssociatedRecord]:
    """Maps provenance edges onto microservices by token overlap.

    Parameters
    ----------
    graph: ProvenanceGraph
        Parsed provenance graph.
    index: MicroserviceIndex
        Index built from the cluster snapshot.

    Returns
    -------
    records: list of AssociatedRecord
        One record per edge with at least one index hit, attributed to the
        service with most hits (ties broken by name). The record merges the
        edge annotations with `src_`/`dst_` prefixed endpoint annotations.
    """
    records = []
    for edge in graph.edges:
        src, dst = graph.endpoints(edge)
        tokens = annotation_tokens(edge.annotations) | annotation_tokens(src.annotations) \
                 | annotation_tokens(dst.annotations)
        hits = Counter(service for token in tokens for service in index.entries.get(token, ()))
        if not hits:
            continue
        best = min(hits, key=lambda s: (-hits[s], s))
        record = dict(edge.annotations)
        record.update({f'src_{k}': v for k, v in src.annotations.items()})
        record.update({f'dst_{k}': v for k, v in dst.annotations.items()})
        records.append(AssociatedRecord(best, edge.event_type, record))

    logger.info(f'Associated {len(records)}/{len(graph.edges)} provenance edges with microservices')
    return records
