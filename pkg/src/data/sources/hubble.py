__all__ = ['SELECTOR_LABEL_KEYS', 'NAMESPACE_LABEL', 'WORLD_CIDR', 'FlowEvent', 'parse_labels', 'select_labels',
           'extract_flow_event', 'parse_hubble_flows', 'flow_entity', 'split_observed_flow']

# Cell
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from ...core.elements import PROTOCOLS, WILDCARD, render_selector
from ...core.records import UNATTRIBUTED, EntityKey
from .utils import parse_json_lines, parse_timestamp

SELECTOR_LABEL_KEYS = ('app', 'k8s-app', 'app.kubernetes.io/name')
NAMESPACE_LABEL = 'kubernetes.io/metadata.name'
WORLD_CIDR = 'cidr:0.0.0.0/0'

# Cell
def parse_labels(labels: List[str]) -> Dict[str, str]:
    """Hubble identity labels (`k8s:app=frontend`, `reserved:world`) to a map.

    Reserved identities are stored under the `reserved` key.
    """
    parsed = {}
    for label in labels:
        source, _, rest = str(label).partition(':')
        if not rest:
            source, rest = '', source
        key, _, value = rest.partition('=')
        if source == 'reserved':
            parsed['reserved'] = key
        else:
            parsed[key] = value
    return parsed


def select_labels(labels: Dict[str, str]) -> Dict[str, str]:
    """Labels used as the peer's pod selector."""
    for key in SELECTOR_LABEL_KEYS:
        if key in labels:
            return {key: labels[key]}
    return {k: v for k, v in labels.items() if not k.startswith('io.') and k != 'reserved'}

# Cell
@dataclass(frozen=True, eq=False)
class FlowEvent:
    record: Dict[str, Any]
    src_pod: str
    dst_pod: str
    src_labels: Dict[str, str]
    dst_labels: Dict[str, str]
    src_namespace: str
    dst_namespace: str
    src_ip: str
    dst_ip: str
    dst_port: int
    protocol: str
    direction: str
    verdict: str
    timestamp: pd.Timestamp
    is_reply: bool = False

    @property
    def subject(self) -> Tuple[str, Dict[str, str], str]:
        if self.direction == 'egress':
            return self.src_pod, self.src_labels, self.src_namespace
        return self.dst_pod, self.dst_labels, self.dst_namespace

    @property
    def peer(self) -> Tuple[str, Dict[str, str], str, str]:
        if self.direction == 'egress':
            return self.dst_pod, self.dst_labels, self.dst_namespace, self.dst_ip
        return self.src_pod, self.src_labels, self.src_namespace, self.src_ip

    def peer_descriptor(self) -> str:
        """Canonical NetworkPolicy peer of the remote endpoint."""
        _, labels, namespace, ip = self.peer
        if 'reserved' in labels:
            if labels['reserved'] == 'world' or not ip:
                return WORLD_CIDR
            return f'cidr:{ip}/32'
        selector = select_labels(labels)
        if not selector:
            return f'cidr:{ip}/32' if ip else WILDCARD
        pods = render_selector({'matchLabels': selector})
        if namespace and namespace != self.subject[2]:
            return f"ns:{render_selector({'matchLabels': {NAMESPACE_LABEL: namespace}})};{pods}"
        return pods

    def observed_flow(self) -> Optional[str]:
        """`direction|peer|port|protocol` of a forwarded request flow, else None."""
        if self.verdict not in ('FORWARDED', '') or self.is_reply:
            return None
        if self.protocol not in PROTOCOLS or not self.dst_port:
            return None
        return '|'.join([self.direction, self.peer_descriptor(), str(self.dst_port), self.protocol])


def split_observed_flow(value: str) -> Tuple[str, str, str, str]:
    direction, rest = value.split('|', 1)
    peer, port, protocol = rest.rsplit('|', 2)
    return direction, peer, port, protocol

# Cell
def _endpoint(flow: Dict[str, Any], side: str) -> Tuple[str, Dict[str, str], str]:
    endpoint = flow.get(side) or {}
    if not isinstance(endpoint, dict):
        raise ValueError(f'{side} endpoint is not an object')
    labels = parse_labels(endpoint.get('labels') or [])
    name = str(endpoint.get('pod_name') or labels.get('reserved') or '')
    return name, labels, str(endpoint.get('namespace') or '')


def extract_flow_event(record: Dict[str, Any]) -> FlowEvent:
    """Reads one flow of a `hubble observe -o json` export."""
    flow = record.get('flow', record)
    if not isinstance(flow, dict):
        raise ValueError('flow is not an object')
    timestamp = parse_timestamp(flow.get('time') or record.get('time'))
    direction = str(flow.get('traffic_direction') or '').lower()
    if direction not in ('ingress', 'egress'):
        raise ValueError(f'flow has no traffic direction ({direction!r})')

    l4 = flow.get('l4') or {}
    protocol, port = '', 0
    for name in l4:
        layer = l4[name] if isinstance(l4[name], dict) else {}
        protocol = name.upper()
        port = int(layer.get('destination_port') or 0)
        break
    if not 0 <= port <= 65535:
        raise ValueError(f'destination port {port} out of range')

    ip = flow.get('IP') or {}
    src_pod, src_labels, src_ns = _endpoint(flow, 'source')
    dst_pod, dst_labels, dst_ns = _endpoint(flow, 'destination')
    return FlowEvent(record=record, src_pod=src_pod, dst_pod=dst_pod, src_labels=src_labels,
                     dst_labels=dst_labels, src_namespace=src_ns, dst_namespace=dst_ns,
                     src_ip=str(ip.get('source') or ''), dst_ip=str(ip.get('destination') or ''),
                     dst_port=port, protocol=protocol, direction=direction,
                     verdict=str(flow.get('verdict') or ''), timestamp=timestamp,
                     is_reply=bool(flow.get('is_reply', flow.get('reply', False))))


def parse_hubble_flows(lines, fatal_threshold: float = 0.5):
    """Parses Hubble flow exports; same contract as `parse_audit_lines`."""
    return parse_json_lines(lines, extract_flow_event, 'flows', fatal_threshold)

# Cell
def flow_entity(event: FlowEvent) -> EntityKey:
    pod, labels, _ = event.subject
    if not pod or 'reserved' in labels:
        return EntityKey('pod', UNATTRIBUTED)
    return EntityKey('pod', pod)
