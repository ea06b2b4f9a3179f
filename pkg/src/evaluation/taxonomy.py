__all__ = ['logger', 'TAXONOMY_FILE', 'CATEGORIES', 'TaxonomyRule', 'INJECTORS', 'load_taxonomy', 'applicable_rules',
           'inject_anti_patterns', 'save_labels', 'load_labels']

# Cell
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from ..core.elements import DeploymentElement, NetPolElement, RolePermission, decompose
from ..core.exceptions import ConfigError
from ..core.manifests import ManifestDoc

logger = logging.getLogger(__name__)

TAXONOMY_FILE = Path(__file__).parent / 'taxonomy.json'
CATEGORIES = ('redundant-permission', 'overly-permissive', 'unused-resource')

# Cell
@dataclass(frozen=True)
class TaxonomyRule:
    id: str
    resource_kind: str
    category: str
    description: str
    injector: Dict[str, Any] = field(default_factory=dict)

    @property
    def op(self) -> str:
        return self.injector['op']

# Cell
def _rules(d: Dict[str, Any]) -> List[Dict[str, Any]]:
    d.setdefault('rules', [])
    if d['rules'] is None:
        d['rules'] = []
    return d['rules']


def _pick(rng: np.random.RandomState, items: Sequence[Any]) -> Any:
    return items[rng.randint(len(items))]


def add_wildcard_verb(d, rng, params):
    rules = _rules(d)
    if not rules:
        rules.append({'apiGroups': [''], 'resources': ['pods'], 'verbs': ['*']})
        return
    rule = _pick(rng, rules)
    rule['verbs'] = list(rule.get('verbs') or []) + ['*']


def add_wildcard_resource(d, rng, params):
    rules = _rules(d)
    group = (_pick(rng, rules).get('apiGroups') or [''])[0] if rules else ''
    rules.append({'apiGroups': [group], 'resources': ['*'], 'verbs': [_pick(rng, ['get', 'list', 'watch'])]})


def add_unused_verbs(d, rng, params):
    rules = _rules(d)
    if not rules:
        rules.append({'apiGroups': [''], 'resources': ['pods'], 'verbs': []})
    rule = _pick(rng, rules)
    verbs = list(rule.get('verbs') or [])
    candidates = [v for v in ('create', 'update', 'patch', 'delete', 'deletecollection') if v not in verbs]
    count = min(int(params.get('count', 2)), len(candidates))
    rule['verbs'] = verbs + [str(v) for v in rng.choice(candidates, size=count, replace=False)]


def add_sensitive_resource(d, rng, params):
    _rules(d).append({'apiGroups': [''], 'resources': [params.get('resource', 'secrets')],
                      'verbs': ['get', 'list', 'watch']})


def add_escalation_verbs(d, rng, params):
    _rules(d).append({'apiGroups': ['rbac.authorization.k8s.io'], 'resources': ['rolebindings', 'roles'],
                      'verbs': ['bind', 'escalate']})


def add_unused_resource(d, rng, params):
    granted = {r for rule in _rules(d) for r in rule.get('resources') or []}
    pool = [r for r in ('configmaps', 'endpoints', 'events', 'persistentvolumeclaims', 'services')
            if r not in granted] or ['podtemplates']
    _rules(d).append({'apiGroups': [''], 'resources': [_pick(rng, pool)], 'verbs': ['get', 'list']})

# Cell
def _direction(d: Dict[str, Any], direction: str) -> List[Dict[str, Any]]:
    spec = d.setdefault('spec', {})
    types = spec.get('policyTypes')
    if types is None:
        types = ['Ingress'] + (['Egress'] if 'egress' in spec else [])
    if direction.capitalize() not in types:
        types = list(types) + [direction.capitalize()]
    spec['policyTypes'] = types
    if spec.get(direction) is None:
        spec[direction] = []
    return spec[direction]


def add_allow_all_ingress(d, rng, params):
    _direction(d, 'ingress').append({})


def add_allow_all_egress(d, rng, params):
    _direction(d, 'egress').append({})


def add_unused_port(d, rng, params):
    rules = _direction(d, 'ingress')
    peers = [p for rule in rules for p in (rule or {}).get('from') or []]
    used = {p.get('port') for rule in rules for p in (rule or {}).get('ports') or []}
    low, high = int(params.get('low', 1024)), int(params.get('high', 65535))
    port = rng.randint(low, high + 1)
    while port in used:
        port = rng.randint(low, high + 1)
    peer = _pick(rng, peers) if peers else {'podSelector': {}}
    rules.append({'from': [peer], 'ports': [{'port': int(port), 'protocol': 'TCP'}]})


def add_world_cidr(d, rng, params):
    _direction(d, 'egress').append({'to': [{'ipBlock': {'cidr': '0.0.0.0/0'}}]})


def add_any_namespace_peer(d, rng, params):
    _direction(d, 'ingress').append({'from': [{'namespaceSelector': {}}]})

# Cell
def _pod(d: Dict[str, Any]) -> Dict[str, Any]:
    return d.setdefault('spec', {}).setdefault('template', {}).setdefault('spec', {})


def _container(d: Dict[str, Any], rng: np.random.RandomState) -> Dict[str, Any]:
    containers = _pod(d).get('containers') or []
    assert containers, 'Deployment has no containers'
    return _pick(rng, containers)


def _security_context(container: Dict[str, Any]) -> Dict[str, Any]:
    if not isinstance(container.get('securityContext'), dict):
        container['securityContext'] = {}
    return container['securityContext']


def set_privileged(d, rng, params):
    _security_context(_container(d, rng))['privileged'] = True


def add_capability(d, rng, params):
    capabilities = _security_context(_container(d, rng)).setdefault('capabilities', {})
    added = list(capabilities.get('add') or [])
    choices = [c for c in params.get('choices', ['NET_ADMIN']) if c not in added] or ['SYS_ADMIN']
    capabilities['add'] = added + [_pick(rng, choices)]


def set_host_namespace(d, rng, params):
    _pod(d)[params.get('field', 'hostNetwork')] = True


def allow_privilege_escalation(d, rng, params):
    _security_context(_container(d, rng))['allowPrivilegeEscalation'] = True


def run_as_root(d, rng, params):
    context = _security_context(_container(d, rng))
    context['runAsUser'] = 0
    context.pop('runAsNonRoot', None)


def add_container_port(d, rng, params):
    container = _container(d, rng)
    ports = container.setdefault('ports', [])
    used = {p.get('containerPort') for p in ports if isinstance(p, dict)}
    low, high = int(params.get('low', 30000)), int(params.get('high', 32767))
    port = rng.randint(low, high + 1)
    while port in used:
        port = rng.randint(low, high + 1)
    ports.append({'containerPort': int(port), 'protocol': 'TCP'})


def mount_host_path(d, rng, params):
    path = params.get('path', '/var/run/docker.sock')
    name = 'host-' + path.strip('/').replace('/', '-').replace('.', '-')
    volumes = _pod(d).setdefault('volumes', [])
    if not any(v.get('name') == name for v in volumes):
        volumes.append({'name': name, 'hostPath': {'path': path}})
    _container(d, rng).setdefault('volumeMounts', []).append({'name': name, 'mountPath': path})


INJECTORS: Dict[str, Callable] = {f.__name__: f for f in (
    add_wildcard_verb, add_wildcard_resource, add_unused_verbs, add_sensitive_resource, add_escalation_verbs,
    add_unused_resource, add_allow_all_ingress, add_allow_all_egress, add_unused_port, add_world_cidr,
    add_any_namespace_peer, set_privileged, add_capability, set_host_namespace, allow_privilege_escalation,
    run_as_root, add_container_port, mount_host_path)}

# Cell
def load_taxonomy(path: Union[str, Path] = TAXONOMY_FILE) -> List[TaxonomyRule]:
    d = json.loads(Path(path).read_text())
    if 'version' not in d:
        raise ConfigError(f'{path}: taxonomy has no version')
    rules = []
    for r in d.get('rules', []):
        rule = TaxonomyRule(id=r['id'], resource_kind=r['resourceKind'], category=r['category'],
                            description=r.get('description', ''), injector=dict(r['injector']))
        if rule.category not in CATEGORIES:
            raise ConfigError(f'{path}: rule {rule.id} has unknown category {rule.category}')
        if rule.op not in INJECTORS:
            raise ConfigError(f'{path}: rule {rule.id} has unknown injector {rule.op}')
        rules.append(rule)
    return rules


def applicable_rules(rules: Sequence[TaxonomyRule], kind: str) -> List[TaxonomyRule]:
    return [r for r in rules if r.resource_kind == kind]


def inject_anti_patterns(manifest: ManifestDoc, rules: Sequence[TaxonomyRule],
                         seed: int = 0) -> Tuple[ManifestDoc, Set[Any]]:
    """Applies every rule matching the manifest kind.

    Returns the excessive manifest and the injected element set, i.e. the
    elements it has beyond the original. Deterministic for a given seed.
    """
    rng = np.random.RandomState(seed)
    d = manifest.to_dict()
    for rule in rules:
        if rule.resource_kind != manifest.kind:
            logger.warning(f'Skipping rule {rule.id}: applies to {rule.resource_kind}, not {manifest.kind}')
            continue
        INJECTORS[rule.op](d, rng, {k: v for k, v in rule.injector.items() if k != 'op'})
    injected = ManifestDoc.from_dict(d)
    return injected, decompose(injected) - decompose(manifest)

# Cell
ELEMENT_TYPES = {'Role': RolePermission, 'NetworkPolicy': NetPolElement, 'Deployment': DeploymentElement}


def save_labels(path: Union[str, Path], kind: str, elements: Set[Any], rules: Optional[Sequence[TaxonomyRule]] = None):
    """Sidecar listing the injected elements of a manifest."""
    d = {'kind': kind, 'rules': [r.id for r in rules or []],
         'elements': sorted((list(e) for e in elements), key=repr)}
    Path(path).write_text(json.dumps(d, indent=2))


def load_labels(path: Union[str, Path]) -> Set[Any]:
    d = json.loads(Path(path).read_text())
    cls = ELEMENT_TYPES[d['kind']]
    return {cls(*e) for e in d['elements']}
