__all__ = ['RESOURCE_KINDS', 'source_of', 'permission_evidence', 'flow_evidence', 'deployment_evidence',
           'requires_evidence', 'ground_truth', 'restrict_to_evidence']

# Cell
import itertools
import re
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Union

from ..core.elements import (NO_PEER, NO_PORT, DeploymentElement, NetPolElement, RolePermission,
                             decompose_deployment, item_id)
from ..core.manifests import ManifestDoc
from ..data.aggregation import AggregatedLog
from ..data.grouping import FLOW_KEY, PERMISSION_KEY
from ..data.sources.audit import DECISION_ANNOTATION
from ..data.sources.hubble import split_observed_flow

RESOURCE_KINDS = ('Role', 'NetworkPolicy', 'Deployment')
ENTITY_SOURCES = {'microservice': 'audit', 'user': 'audit', 'pod': 'network', 'event': 'provenance'}

Aggregates = Union[AggregatedLog, Sequence[AggregatedLog]]

# Cell
def _as_list(aggregates: Aggregates) -> List[AggregatedLog]:
    return [aggregates] if isinstance(aggregates, AggregatedLog) else list(aggregates)


def source_of(agg: AggregatedLog) -> str:
    return agg.source or ENTITY_SOURCES[agg.entity.kind]


def permission_evidence(aggregates: Aggregates) -> Set[RolePermission]:
    """Permission triples exercised according to audit aggregates.

    Uses the `observedPermission` annotation; aggregates without it fall back
    to the verb x resource x apiGroup product unless no request was allowed.
    """
    permissions = set()
    for agg in _as_list(aggregates):
        if source_of(agg) != 'audit':
            continue
        observed = agg.values(PERMISSION_KEY)
        if observed:
            for value in observed:
                group, resource, verb = str(value).split('|', 2)
                permissions.add(RolePermission(group, resource, verb))
            continue
        if 'verb' not in agg.table or 'resource' not in agg.table:
            continue
        decisions = set(agg.values(DECISION_ANNOTATION))
        if decisions and 'allow' not in decisions:
            continue
        groups = agg.values('apiGroup') or ['']
        for group, resource, verb in itertools.product(groups, agg.values('resource'), agg.values('verb')):
            if resource:
                permissions.add(RolePermission(str(group), str(resource), str(verb).lower()))
    return permissions


def flow_evidence(aggregates: Aggregates) -> Set[NetPolElement]:
    """Observed flow tuples; a direction without flows contributes its deny-all sentinel."""
    elements = set()
    for agg in _as_list(aggregates):
        if source_of(agg) != 'network':
            continue
        elements.update(NetPolElement(*split_observed_flow(str(v))) for v in agg.values(FLOW_KEY))
    for direction in ('ingress', 'egress'):
        if not any(e.direction == direction for e in elements):
            elements.add(NetPolElement(direction, NO_PEER, NO_PORT, NO_PORT))
    return elements

# Cell
PORT_PATH = re.compile(r'\.ports\[(\d+)/\w+\]$')
NAMED_ITEM = re.compile(r'\.(volumes|volumeMounts)\[([^\]]+)\]$')
CONTAINER_PATH = re.compile(r'\.(initContainers|containers|ephemeralContainers)\[([^\]]*)\]')

# permissive values that logs never justify
ALWAYS_EXCESSIVE = {'privileged': True, 'allowPrivilegeEscalation': True, 'runAsNonRoot': False, 'runAsUser': 0,
                    'runAsGroup': 0, 'readOnlyRootFilesystem': False, 'procMount': 'Unmasked',
                    'hostNetwork': True, 'hostPID': True, 'hostIPC': True}


def requires_evidence(element: DeploymentElement) -> Optional[str]:
    """Evidence rule of a Deployment element, None for neutral fields.

    'port' needs traffic on the port, 'volume'/'mount' need file activity
    under a host path, 'api' needs API activity and 'never' is always excessive.
    """
    path, value = element.path, element.value
    leaf = path.rsplit('.', 1)[-1]
    if path.endswith('.hostPort') or '.capabilities.add[' in path:
        return 'never'
    if PORT_PATH.search(path):
        return 'port'
    if leaf.startswith('volumes['):
        return 'volume'
    if leaf.startswith('volumeMounts['):
        return 'mount'
    if leaf == 'automountServiceAccountToken' and value is True:
        return 'api'
    if leaf == 'type' and '.seccompProfile.' in path and value == 'Unconfined':
        return 'never'
    expected = ALWAYS_EXCESSIVE.get(leaf, None)
    if expected is not None and type(value) is type(expected) and value == expected:
        return 'never'
    return None


def _string_values(aggregates: List[AggregatedLog], key_filter) -> Set[str]:
    values = set()
    for agg in aggregates:
        for key in agg.table:
            if key_filter(key.lower()):
                values.update(str(v) for v in agg.values(key) if v is not None)
    return values


def _under(paths: Set[str], prefix: str) -> bool:
    prefix = prefix.rstrip('/')
    return any(p == prefix or p.startswith(prefix + '/') for p in paths) if prefix else False


def deployment_evidence(manifest: ManifestDoc, aggregates: Aggregates) -> Set[DeploymentElement]:
    """Elements of `manifest` that are neutral or justified by the aggregates."""
    aggregates = _as_list(aggregates)
    provenance = [a for a in aggregates if source_of(a) == 'provenance']
    ports = _string_values(provenance, lambda k: 'port' in k)
    ports.update(e.port for e in flow_evidence(aggregates) if e.direction == 'ingress')
    paths = {p for p in _string_values(provenance, lambda k: 'path' in k or k.endswith('name'))
             if p.startswith('/')}
    api_active = bool(permission_evidence(aggregates))

    pod = manifest.get('spec.template.spec', {}) or {}
    volumes = {v.get('name'): v for v in pod.get('volumes') or [] if isinstance(v, dict)}

    def host_path_used(volume: Dict[str, Any], mount_paths: List[str]) -> bool:
        host = (volume.get('hostPath') or {}).get('path', '')
        return _under(paths, host) or any(_under(paths, m) for m in mount_paths)

    def mounts_of(volume_name: str) -> List[str]:
        return [m.get('mountPath', '') for group in ('initContainers', 'containers', 'ephemeralContainers')
                for c in pod.get(group) or [] for m in c.get('volumeMounts') or []
                if isinstance(m, dict) and m.get('name') == volume_name]

    evidenced = set()
    for element in decompose_deployment(manifest):
        rule = requires_evidence(element)
        if rule is None:
            ok = True
        elif rule == 'never':
            ok = False
        elif rule == 'port':
            ok = PORT_PATH.search(element.path).group(1) in ports
        elif rule == 'api':
            ok = api_active
        else:
            name = NAMED_ITEM.search(element.path).group(2)
            if rule == 'volume':
                volume = volumes.get(name, {})
                ok = 'hostPath' not in volume or host_path_used(volume, mounts_of(name))
            else:
                container = CONTAINER_PATH.search(element.path)
                mounts = [m for c in pod.get(container.group(1)) or [] if c.get('name') == container.group(2)
                          for m in c.get('volumeMounts') or [] if item_id(m) == name]
                volume = volumes.get(mounts[0].get('name'), {}) if mounts else {}
                ok = 'hostPath' not in volume or host_path_used(volume, [m.get('mountPath', '') for m in mounts])
        if ok:
            evidenced.add(element)
    return evidenced

# Cell
def ground_truth(aggregates: Aggregates, resource_kind: str,
                 reference: Optional[ManifestDoc] = None) -> Set[Any]:
    """Log-evidenced element set of a resource kind.

    Parameters
    ----------
    aggregates: AggregatedLog or sequence
        AALs for Roles, ANLs for NetworkPolicies, AALs and APLs for Deployments.
    resource_kind: str
        'Role', 'NetworkPolicy' or 'Deployment'.
    reference: ManifestDoc, optional
        Deployment whose elements are filtered; required for Deployments since
        images, containers and names come from the manifest, not from logs.
    """
    if resource_kind == 'Role':
        return permission_evidence(aggregates)
    if resource_kind == 'NetworkPolicy':
        return flow_evidence(aggregates)
    if resource_kind == 'Deployment':
        if reference is None:
            raise ValueError('Deployment ground truth needs the reference manifest')
        return deployment_evidence(reference, aggregates)
    raise ValueError(f'Unknown resource kind {resource_kind}')


def restrict_to_evidence(elements: Iterable[Any], evidence: Set[Any]) -> Set[Any]:
    """Evidenced concrete elements plus the evidence covered by wildcard elements."""
    elements = set(elements)
    kept = {e for e in elements if not getattr(e, 'wildcard', False) and e in evidence}
    for pattern in (e for e in elements if getattr(e, 'wildcard', False)):
        kept.update(ev for ev in evidence if not getattr(ev, 'wildcard', False) and pattern.covers(ev))
    return kept
