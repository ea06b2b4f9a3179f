__all__ = ['SCHEMES', 'PERMISSION_KEY', 'FLOW_KEY', 'event_record', 'group_by_entity', 'split_by_microservice',
           'sort_events']

# Cell
from collections import defaultdict
from typing import Any, Dict, Iterable, List, Optional, Sequence

from typing_extensions import Literal

from ..core.records import EntityKey
from .association import AssociatedRecord
from .sources.audit import AuditEvent, audit_entity
from .sources.hubble import FlowEvent, flow_entity

Scheme = Literal['by_microservice_user', 'by_pod', 'by_event']
SCHEMES = ('by_microservice_user', 'by_pod', 'by_event')
PERMISSION_KEY = 'observedPermission'
FLOW_KEY = 'observedFlow'

# Cell
def event_record(event: Any) -> Dict[str, Any]:
    """Raw record of an event plus its evidence annotation."""
    if isinstance(event, AuditEvent):
        record, evidence = dict(event.record), event.observed_permission()
        if evidence:
            record[PERMISSION_KEY] = evidence
        return record
    if isinstance(event, FlowEvent):
        record, evidence = dict(event.record), event.observed_flow()
        if evidence:
            record[FLOW_KEY] = evidence
        return record
    if isinstance(event, AssociatedRecord):
        return dict(event.record)
    raise TypeError(f'Unsupported event type {type(event).__name__}')


def group_by_entity(events: Iterable[Any], scheme: Scheme,
                    services: Optional[Iterable[str]] = None) -> Dict[EntityKey, List[Dict[str, Any]]]:
    """Partitions events into per-entity record lists.

    Parameters
    ----------
    events: iterable
        AuditEvent, FlowEvent or AssociatedRecord objects matching `scheme`.
    scheme: str
        'by_microservice_user' (audit), 'by_pod' (flows) or 'by_event' (provenance).
    services: iterable of str, optional
        Known microservice names used to attribute service-account users.

    Returns
    -------
    groups: dict
        EntityKey -> records, keys sorted. Every event lands in exactly one group.
    """
    if scheme not in SCHEMES:
        raise ValueError(f'Unknown grouping scheme {scheme}')
    services = sorted(services) if services is not None else None
    expected = {'by_microservice_user': AuditEvent, 'by_pod': FlowEvent, 'by_event': AssociatedRecord}[scheme]

    groups = defaultdict(list)
    for event in events:
        if not isinstance(event, expected):
            raise TypeError(f'Scheme {scheme} expects {expected.__name__}, got {type(event).__name__}')
        if scheme == 'by_microservice_user':
            key = audit_entity(event, services)
        elif scheme == 'by_pod':
            key = flow_entity(event)
        else:
            key = EntityKey('event', event.event_type)
        groups[key].append(event_record(event))
    return dict(sorted(groups.items()))


def split_by_microservice(records: Iterable[AssociatedRecord]) -> Dict[str, List[AssociatedRecord]]:
    split = defaultdict(list)
    for record in records:
        split[record.microservice].append(record)
    return dict(sorted(split.items()))


def sort_events(events: Sequence[Any]) -> List[Any]:
    """Stable sort by timestamp."""
    return sorted(events, key=lambda e: e.timestamp)
