__all__ = ['SA_PREFIX', 'DECISION_ANNOTATION', 'AuditEvent', 'extract_audit_event', 'parse_audit_lines', 'audit_entity']

# Cell
import logging
import re
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, Optional

import pandas as pd

from ...core.records import UNATTRIBUTED, EntityKey
from .utils import parse_json_lines, parse_timestamp

logger = logging.getLogger(__name__)

SA_PREFIX = 'system:serviceaccount:'
DECISION_ANNOTATION = 'authorization.k8s.io/decision'

# Cell
@dataclass(frozen=True, eq=False)
class AuditEvent:
    record: Dict[str, Any]
    user: str
    verb: str
    resource: str
    api_group: str
    namespace: str
    object_name: str
    decision: str
    source_ips: FrozenSet[str]
    timestamp: pd.Timestamp
    subresource: str = ''

    @property
    def allowed(self) -> bool:
        return self.decision in ('', 'allow')

    @property
    def rbac_resource(self) -> str:
        """Resource as written in Role rules, e.g. `pods/log`."""
        return f'{self.resource}/{self.subresource}' if self.subresource else self.resource

    def observed_permission(self) -> Optional[str]:
        """`apiGroup|resource|verb` of an allowed resource request, else None."""
        if not self.allowed or not self.resource:
            return None
        return f'{self.api_group}|{self.rbac_resource}|{self.verb}'

# Cell
def extract_audit_event(record: Dict[str, Any]) -> AuditEvent:
    """Reads the fields of one `audit.k8s.io/v1` Event."""
    verb = record.get('verb')
    if not isinstance(verb, str) or not verb:
        raise ValueError('audit event has no verb')
    timestamp = parse_timestamp(record.get('requestReceivedTimestamp') or record.get('stageTimestamp')
                                or record.get('timestamp'))

    user = record.get('user')
    username = str(user.get('username') or '') if isinstance(user, dict) else ''

    ref = record.get('objectRef')
    if not isinstance(ref, dict):
        logger.debug(f"Audit event {record.get('auditID', '?')} has no objectRef, resource left empty")
        ref = {}

    annotations = record.get('annotations')
    annotations = annotations if isinstance(annotations, dict) else {}
    decision = str(annotations.get(DECISION_ANNOTATION) or '')
    if not decision:
        status = record.get('responseStatus')
        if isinstance(status, dict) and status.get('code') in (401, 403):
            decision = 'forbid'

    ips = record.get('sourceIPs')
    ips = frozenset(str(ip) for ip in ips) if isinstance(ips, list) else frozenset()

    return AuditEvent(record=record, user=username, verb=verb.lower(),
                      resource=str(ref.get('resource') or ''),
                      api_group=str(ref.get('apiGroup') or ''),
                      namespace=str(ref.get('namespace') or ''),
                      object_name=str(ref.get('name') or ''),
                      decision=decision, source_ips=ips, timestamp=timestamp,
                      subresource=str(ref.get('subresource') or ''))


def parse_audit_lines(lines, fatal_threshold: float = 0.5):
    """Parses a Kubernetes audit log (one JSON event per line).

    Unparseable lines are counted and skipped; `FatalFormatError` is raised
    only when the failed fraction exceeds `fatal_threshold`.
    """
    events = parse_json_lines(lines, extract_audit_event, 'audit', fatal_threshold)
    missing = sum(not isinstance(e.record.get('objectRef'), dict) for e in events)
    if missing:
        logger.warning(f'audit: {missing}/{len(events)} events have no objectRef, resource left empty')
    return events

# Cell
def audit_entity(event: AuditEvent, services: Optional[Iterable[str]] = None) -> EntityKey:
    """Microservice of a service-account user, otherwise the user itself.

    A service account maps to the service whose name is one of the tokens of
    the account name (`cartservice-sa` -> `cartservice`). Without a service
    list the account name is taken as the microservice name.
    """
    if not event.user:
        return EntityKey('user', UNATTRIBUTED)
    if event.user.startswith(SA_PREFIX):
        account = event.user[len(SA_PREFIX):].split(':')[-1]
        if services is None:
            return EntityKey('microservice', account)
        tokens = set(re.split(r'[-_.:]', account)) | {account}
        matches = sorted(s for s in services if s in tokens)
        if matches:
            return EntityKey('microservice', matches[0])
    return EntityKey('user', event.user)
