__all__ = ['WILDCARD', 'NO_PEER', 'NO_PORT', 'PROTOCOLS', 'RolePermission', 'NetPolElement', 'DeploymentElement',
           'decompose_role', 'assemble_role', 'render_selector', 'parse_selector', 'render_peer', 'peer_object',
           'decompose_netpol', 'assemble_netpol', 'decompose_deployment', 'prune_deployment', 'decompose',
           'element_type', 'item_id']

# Cell
import copy
from collections import defaultdict
from typing import Any, Dict, Iterable, Iterator, List, NamedTuple, Optional, Set, Tuple

from .exceptions import MalformedRuleError, TypeMismatchError
from .manifests import ManifestDoc
from .records import Scalar, content_hash, is_scalar

WILDCARD = '*'
NO_PEER = 'NONE'
NO_PORT = '-'
PROTOCOLS = ('TCP', 'UDP', 'SCTP')

# Cell
class RolePermission(NamedTuple):
    """(apiGroup, resource, verb) triple. The core group is the empty string."""
    api_group: str
    resource: str
    verb: str

    @property
    def wildcard(self) -> bool:
        return WILDCARD in self

    def covers(self, other: 'RolePermission') -> bool:
        return all(a == WILDCARD or a == b for a, b in zip(self, other))


def decompose_role(doc: ManifestDoc) -> Set[RolePermission]:
    """Cartesian expansion of every rule into permission triples.

    Wildcards are kept as literal elements.
    """
    assert doc.kind == 'Role', f'Expected a Role, got {doc.kind}'
    permissions = set()
    for i, rule in enumerate(doc.body.get('rules') or []):
        if not isinstance(rule, dict):
            raise MalformedRuleError(f'{doc.name}: rule {i} is not a mapping')
        resources, verbs = rule.get('resources'), rule.get('verbs')
        if not resources or not verbs:
            raise MalformedRuleError(f'{doc.name}: rule {i} lacks resources or verbs')
        api_groups = rule.get('apiGroups') or ['']
        for field, values in (('apiGroups', api_groups), ('resources', resources), ('verbs', verbs)):
            if not isinstance(values, list):
                raise MalformedRuleError(f'{doc.name}: rule {i} {field} must be a list')
        for group in api_groups:
            for resource in resources:
                for verb in verbs:
                    permissions.add(RolePermission(str(group or ''), str(resource), str(verb).lower()))
    return permissions


def assemble_role(name: str, namespace: str, permissions: Iterable[RolePermission],
                  metadata: Optional[Dict[str, Any]] = None) -> ManifestDoc:
    """Role with one rule per (apiGroup, resource), verbs sorted."""
    grouped = defaultdict(set)
    for p in permissions:
        grouped[(p.api_group, p.resource)].add(p.verb)
    rules = [{'apiGroups': [group], 'resources': [resource], 'verbs': sorted(verbs)}
             for (group, resource), verbs in sorted(grouped.items())]
    metadata = metadata or {'name': name, 'namespace': namespace}
    return ManifestDoc.from_dict({'apiVersion': 'rbac.authorization.k8s.io/v1', 'kind': 'Role',
                                  'metadata': metadata, 'rules': rules})

# Cell
class NetPolElement(NamedTuple):
    """(direction, peer, port, protocol).

    `peer` is a canonical selector string, `*` for any peer and `NONE` for the
    deny-all sentinel. `port` is a number, a named port, a `from-to` range,
    `*` for any port or `-` on the sentinel.
    """
    direction: str
    peer: str
    port: str
    protocol: str

    @property
    def sentinel(self) -> bool:
        return self.peer == NO_PEER

    @property
    def wildcard(self) -> bool:
        return WILDCARD in (self.peer, self.port, self.protocol)

    def covers(self, other: 'NetPolElement') -> bool:
        if self.sentinel or other.sentinel or self.direction != other.direction:
            return False
        return all(a == WILDCARD or a == b for a, b in zip(self[1:], other[1:]))


def render_selector(selector: Optional[Dict[str, Any]]) -> str:
    """`k=v` pairs and expressions joined by commas; `{}` selects everything."""
    selector = selector or {}
    parts = [f'{k}={v}' for k, v in sorted((selector.get('matchLabels') or {}).items())]
    for expr in selector.get('matchExpressions') or []:
        operator = expr.get('operator', '')
        if operator in ('Exists', 'DoesNotExist'):
            parts.append(f"{expr.get('key')} {operator}")
        else:
            values = '|'.join(sorted(str(v) for v in expr.get('values') or []))
            parts.append(f"{expr.get('key')} {operator} ({values})")
    return ','.join(sorted(parts)) if parts else '{}'


def parse_selector(text: str) -> Dict[str, Any]:
    if text == '{}':
        return {}
    labels, expressions = {}, []
    for part in text.split(','):
        if ' ' in part:
            key, operator, *rest = part.split(' ', 2)
            expr = {'key': key, 'operator': operator}
            if rest:
                expr['values'] = rest[0].strip('()').split('|')
            expressions.append(expr)
        else:
            key, _, value = part.partition('=')
            labels[key] = value
    selector = {}
    if labels:
        selector['matchLabels'] = labels
    if expressions:
        selector['matchExpressions'] = expressions
    return selector


def render_peer(peer: Dict[str, Any]) -> str:
    if not isinstance(peer, dict) or not peer:
        raise MalformedRuleError(f'Invalid peer {peer!r}')
    if 'ipBlock' in peer:
        block = peer['ipBlock'] or {}
        excluded = sorted(block.get('except') or [])
        return f"cidr:{block.get('cidr')}" + (f"!{','.join(excluded)}" if excluded else '')
    pods = render_selector(peer['podSelector']) if 'podSelector' in peer else None
    if 'namespaceSelector' in peer:
        namespaces = render_selector(peer['namespaceSelector'])
        return f'ns:{namespaces};{pods}' if pods is not None else f'ns:{namespaces}'
    if pods is None:
        raise MalformedRuleError(f'Peer without selector {peer!r}')
    return pods


def peer_object(peer: str) -> Optional[Dict[str, Any]]:
    """Inverse of `render_peer`; None for the any-peer wildcard."""
    if peer == WILDCARD:
        return None
    if peer.startswith('cidr:'):
        cidr, _, excluded = peer[len('cidr:'):].partition('!')
        block = {'cidr': cidr}
        if excluded:
            block['except'] = excluded.split(',')
        return {'ipBlock': block}
    if peer.startswith('ns:'):
        namespaces, sep, pods = peer[len('ns:'):].partition(';')
        obj = {'namespaceSelector': parse_selector(namespaces)}
        if sep:
            obj['podSelector'] = parse_selector(pods)
        return obj
    return {'podSelector': parse_selector(peer)}


def _render_port(entry: Dict[str, Any], policy: str) -> Tuple[str, str]:
    protocol = str(entry.get('protocol') or 'TCP').upper()
    if protocol not in PROTOCOLS:
        raise MalformedRuleError(f'{policy}: unknown protocol {protocol}')
    port = entry.get('port')
    if port is None:
        return WILDCARD, protocol
    if isinstance(port, int) or str(port).isdigit():
        port = int(port)
        if not 1 <= port <= 65535:
            raise MalformedRuleError(f'{policy}: port {port} out of range')
        if entry.get('endPort') is not None:
            return f"{port}-{int(entry['endPort'])}", protocol
    return str(port), protocol


def _policy_types(spec: Dict[str, Any]) -> List[str]:
    if spec.get('policyTypes') is not None:
        return list(spec['policyTypes'])
    return ['Ingress'] + (['Egress'] if 'egress' in spec else [])


def decompose_netpol(doc: ManifestDoc) -> Set[NetPolElement]:
    assert doc.kind == 'NetworkPolicy', f'Expected a NetworkPolicy, got {doc.kind}'
    spec = doc.body.get('spec') or {}
    policy_types = _policy_types(spec)
    elements = set()
    for direction, peer_key in (('ingress', 'from'), ('egress', 'to')):
        if direction.capitalize() not in policy_types:
            continue
        rules = spec.get(direction) or []
        if not rules:
            elements.add(NetPolElement(direction, NO_PEER, NO_PORT, NO_PORT))
            continue
        for rule in rules:
            rule = rule or {}
            peers = [render_peer(p) for p in rule.get(peer_key) or []] or [WILDCARD]
            ports = [_render_port(p, doc.name) for p in rule.get('ports') or []] or [(WILDCARD, WILDCARD)]
            for peer in peers:
                for port, protocol in ports:
                    elements.add(NetPolElement(direction, peer, port, protocol))
    return elements


def _port_entry(port: str, protocol: str) -> Dict[str, Any]:
    entry = {'protocol': protocol}
    if port == WILDCARD:
        return entry
    start, sep, end = port.partition('-')
    if sep and start.isdigit() and end.isdigit():
        entry.update(port=int(start), endPort=int(end))
    else:
        entry['port'] = int(port) if port.isdigit() else port
    return entry


def assemble_netpol(name: str, namespace: str, pod_selector: Dict[str, Any],
                    elements: Iterable[NetPolElement], metadata: Optional[Dict[str, Any]] = None,
                    peers: Optional[Dict[str, Dict[str, Any]]] = None) -> ManifestDoc:
    """NetworkPolicy whose decomposition is exactly `elements`.

    `peers` maps canonical peer strings to the original peer objects so that
    selectors are re-emitted verbatim.
    """
    peers = peers or {}
    by_direction = defaultdict(set)
    for element in elements:
        by_direction[element.direction].add(element)

    spec = {'podSelector': pod_selector or {}, 'policyTypes': []}
    for direction, peer_key in (('ingress', 'from'), ('egress', 'to')):
        if direction not in by_direction:
            continue
        spec['policyTypes'].append(direction.capitalize())
        grouped = defaultdict(list)
        for e in by_direction[direction]:
            if e.sentinel:
                continue
            any_port = e.port == WILDCARD and e.protocol == WILDCARD
            grouped[(e.peer, any_port)].append(e)
        rules = []
        for (peer, any_port), group in sorted(grouped.items()):
            rule = {}
            if peer != WILDCARD:
                rule[peer_key] = [copy.deepcopy(peers.get(peer)) or peer_object(peer)]
            if not any_port:
                rule['ports'] = [_port_entry(e.port, e.protocol) for e in sorted(group)]
            rules.append(rule)
        spec[direction] = rules

    metadata = metadata or {'name': name, 'namespace': namespace}
    return ManifestDoc.from_dict({'apiVersion': 'networking.k8s.io/v1', 'kind': 'NetworkPolicy',
                                  'metadata': metadata, 'spec': spec})

# Cell
class DeploymentElement(NamedTuple):
    """Security-relevant field of a Deployment.

    `value` is the scalar at `path`, or `sha256:<hash>` of a sub-document.
    List items are addressed as `[name]` (`[port/protocol]` for ports).
    """
    path: str
    value: Scalar


POD_PREFIX = 'spec.template.spec'
POD_SCALAR_FIELDS = ('automountServiceAccountToken', 'hostIPC', 'hostNetwork', 'hostPID',
                     'serviceAccount', 'serviceAccountName')
CONTAINER_GROUPS = ('initContainers', 'containers', 'ephemeralContainers')
PRUNABLE = ('securityContext', 'capabilities', 'add', 'drop', 'ports', 'volumes', 'volumeMounts',
            'env', 'sysctls', 'seLinuxOptions', 'seccompProfile', 'supplementalGroups')


def item_id(item: Dict[str, Any]) -> str:
    name = item.get('name')
    return str(name) if is_scalar(name) and name is not None else content_hash(item)[:12]


def _walk_tree(prefix: str, node: Dict[str, Any]) -> Iterator[Tuple[DeploymentElement, Any, Any]]:
    for key in sorted(node):
        value, path = node[key], f'{prefix}.{key}'
        if isinstance(value, dict):
            yield from _walk_tree(path, value)
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if isinstance(item, dict):
                    yield DeploymentElement(f'{path}[{item_id(item)}]', f'sha256:{content_hash(item)}'), value, i
                elif is_scalar(item):
                    yield DeploymentElement(f'{path}[{item}]', item), value, i
        elif is_scalar(value):
            yield DeploymentElement(path, value), node, key


def _walk_deployment(doc: Dict[str, Any]) -> Iterator[Tuple[DeploymentElement, Any, Any]]:
    """Yields (element, parent, key) so that `del parent[key]` removes the element."""
    pod = ((doc.get('spec') or {}).get('template') or {}).get('spec') or {}
    for key in POD_SCALAR_FIELDS:
        if key in pod and is_scalar(pod[key]):
            yield DeploymentElement(f'{POD_PREFIX}.{key}', pod[key]), pod, key
    if isinstance(pod.get('securityContext'), dict):
        yield from _walk_tree(f'{POD_PREFIX}.securityContext', pod['securityContext'])
    for i, volume in enumerate(pod.get('volumes') or []):
        if isinstance(volume, dict):
            element = DeploymentElement(f'{POD_PREFIX}.volumes[{item_id(volume)}]', f'sha256:{content_hash(volume)}')
            yield element, pod['volumes'], i

    for group in CONTAINER_GROUPS:
        for index, container in enumerate(pod.get(group) or []):
            if not isinstance(container, dict):
                continue
            name = container.get('name')
            # unnamed containers are told apart by position
            label = name if is_scalar(name) and name not in (None, '') else f'#{index}'
            prefix = f'{POD_PREFIX}.{group}[{label}]'
            if is_scalar(container.get('image')) and 'image' in container:
                yield DeploymentElement(f'{prefix}.image', container['image']), container, 'image'
            for i, port in enumerate(container.get('ports') or []):
                if not isinstance(port, dict) or 'containerPort' not in port:
                    continue
                protocol = str(port.get('protocol') or 'TCP').upper()
                port_path = f"{prefix}.ports[{port['containerPort']}/{protocol}]"
                yield DeploymentElement(port_path, port['containerPort']), container['ports'], i
                if 'hostPort' in port:
                    yield DeploymentElement(f'{port_path}.hostPort', port['hostPort']), port, 'hostPort'
            if isinstance(container.get('securityContext'), dict):
                yield from _walk_tree(f'{prefix}.securityContext', container['securityContext'])
            for i, mount in enumerate(container.get('volumeMounts') or []):
                if isinstance(mount, dict):
                    yield (DeploymentElement(f'{prefix}.volumeMounts[{item_id(mount)}]', mount.get('mountPath')),
                           container['volumeMounts'], i)
            for i, env in enumerate(container.get('env') or []):
                if isinstance(env, dict) and env.get('name'):
                    yield DeploymentElement(f"{prefix}.env[{env['name']}]", env['name']), container['env'], i


def decompose_deployment(doc: ManifestDoc) -> Set[DeploymentElement]:
    """Elements on the security path allow-list; resource requests/limits are never emitted."""
    assert doc.kind == 'Deployment', f'Expected a Deployment, got {doc.kind}'
    return {element for element, _, _ in _walk_deployment(doc.to_dict())}


def _drop_empty(node: Any) -> None:
    if isinstance(node, dict):
        for key in list(node):
            _drop_empty(node[key])
            if key in PRUNABLE and node[key] in ({}, [], None):
                del node[key]
    elif isinstance(node, list):
        for item in node:
            _drop_empty(item)


def prune_deployment(doc: ManifestDoc, keep: Set[DeploymentElement]) -> ManifestDoc:
    """Removes every element not in `keep` and the containers it leaves empty."""
    assert doc.kind == 'Deployment', f'Expected a Deployment, got {doc.kind}'
    d = doc.to_dict()
    drops = [(parent, key) for element, parent, key in _walk_deployment(d) if element not in keep]
    list_drops = {}
    for parent, key in drops:
        if isinstance(parent, list):
            list_drops.setdefault(id(parent), (parent, set()))[1].add(key)
        else:
            parent.pop(key, None)
    for items, indexes in list_drops.values():
        items[:] = [item for i, item in enumerate(items) if i not in indexes]
    _drop_empty(((d.get('spec') or {}).get('template') or {}).get('spec'))
    return ManifestDoc.from_dict(d)

# Cell
DECOMPOSERS = {'Role': decompose_role, 'NetworkPolicy': decompose_netpol, 'Deployment': decompose_deployment}


def decompose(doc: ManifestDoc) -> Set[Any]:
    if doc.kind not in DECOMPOSERS:
        raise TypeMismatchError(f'No element decomposition for kind {doc.kind}')
    return DECOMPOSERS[doc.kind](doc)


def element_type(elements: Iterable[Any]) -> Optional[type]:
    """Common element type of a set; None when empty."""
    types = {type(e) for e in elements}
    if len(types) > 1:
        raise TypeMismatchError(f'Mixed element types {sorted(t.__name__ for t in types)}')
    return types.pop() if types else None
