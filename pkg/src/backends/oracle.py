__all__ = ['logger', 'workload_name', 'oracle_create_role', 'oracle_create_netpol', 'oracle_refine',
           'scan_prompt', 'OracleBackend']

# Cell
import logging
import re
from typing import List, Optional, Sequence, Tuple, Union

from ..chains.prompts import fenced, fenced_blocks, parse_header
from ..chains.spec import TaskKind
from ..core.elements import (NO_PEER, NO_PORT, NetPolElement, assemble_netpol, assemble_role, decompose_netpol,
                             decompose_role, prune_deployment, render_peer)
from ..core.exceptions import BackendError, HardeningError
from ..core.manifests import ManifestDoc, dump_manifests, parse_manifest
from ..data.aggregation import AggregatedLog, load_aggregated, serialize_aggregated
from ..data.sources.audit import SA_PREFIX
from ..evaluation.baseline import (deployment_evidence, flow_evidence, permission_evidence, restrict_to_evidence,
                                   source_of)
from .base import Backend, ChatMessage, check_messages

logger = logging.getLogger(__name__)

Aggregates = Union[AggregatedLog, Sequence[AggregatedLog]]

POD_SUFFIX = re.compile(r'^(?P<name>.+?)(-[a-z0-9]{6,10})?-[a-z0-9]{5}$')

# Cell
def _as_list(aggregates: Aggregates) -> List[AggregatedLog]:
    return [aggregates] if isinstance(aggregates, AggregatedLog) else list(aggregates)


def workload_name(pod: str) -> str:
    """`cartservice-5d844fc8b-x2kqp` -> `cartservice`."""
    match = POD_SUFFIX.match(pod)
    return match.group('name') if match else pod


def _account_namespace(aals: List[AggregatedLog]) -> Optional[str]:
    namespaces = {str(u)[len(SA_PREFIX):].split(':')[0] for a in aals for u in a.values('username')
                  if str(u).startswith(SA_PREFIX)}
    return namespaces.pop() if len(namespaces) == 1 else None


def oracle_create_role(aal: Aggregates, name: Optional[str] = None,
                       namespace: Optional[str] = None) -> List[ManifestDoc]:
    """ServiceAccount, Role and RoleBinding granting exactly the evidenced permissions."""
    aals = [a for a in _as_list(aal) if source_of(a) == 'audit']
    name = name or (aals[0].entity.id if aals else 'workload')
    namespace = namespace or _account_namespace(aals) or 'default'
    account = ManifestDoc.from_dict({'apiVersion': 'v1', 'kind': 'ServiceAccount',
                                     'metadata': {'name': name, 'namespace': namespace}})
    role = assemble_role(f'{name}-role', namespace, permission_evidence(aals))
    binding = ManifestDoc.from_dict({
        'apiVersion': 'rbac.authorization.k8s.io/v1', 'kind': 'RoleBinding',
        'metadata': {'name': f'{name}-rolebinding', 'namespace': namespace},
        'roleRef': {'apiGroup': 'rbac.authorization.k8s.io', 'kind': 'Role', 'name': role.name},
        'subjects': [{'kind': 'ServiceAccount', 'name': name, 'namespace': namespace}]})
    return [account, role, binding]


def oracle_create_netpol(anl: Aggregates, deployment: Optional[ManifestDoc] = None,
                         namespace: Optional[str] = None) -> ManifestDoc:
    """NetworkPolicy allowing exactly the observed flows; default-deny when none were seen."""
    anls = [a for a in _as_list(anl) if source_of(a) == 'network']
    if deployment is not None:
        workload = deployment.name
        selector = deployment.get('spec.selector.matchLabels') or {'app': workload}
        namespace = namespace or deployment.namespace
    else:
        workload = workload_name(anls[0].entity.id) if anls else 'workload'
        selector = {'app': workload}
    return assemble_netpol(f'{workload}-netpol', namespace or 'default', {'matchLabels': selector},
                           flow_evidence(anls))


def oracle_refine(manifest: ManifestDoc, aggregates: Aggregates, kind: Optional[str] = None) -> ManifestDoc:
    """Keeps only the log-evidenced elements of `manifest`; idempotent.

    Wildcards are replaced by the evidence they cover. A NetworkPolicy
    direction left without rules keeps an explicit deny-all.
    """
    kind = kind or manifest.kind
    assert kind == manifest.kind, f'Expected a {kind}, got {manifest.kind}'
    if kind == 'Role':
        kept = restrict_to_evidence(decompose_role(manifest), permission_evidence(aggregates))
        return assemble_role(manifest.name, manifest.namespace, kept, metadata=manifest.metadata)
    if kind == 'NetworkPolicy':
        elements = decompose_netpol(manifest)
        kept = restrict_to_evidence(elements, flow_evidence(aggregates))
        for direction in {e.direction for e in elements}:
            if not any(e.direction == direction for e in kept):
                kept.add(NetPolElement(direction, NO_PEER, NO_PORT, NO_PORT))
        spec = manifest.body.get('spec') or {}
        peers = {}
        for direction, peer_key in (('ingress', 'from'), ('egress', 'to')):
            for rule in spec.get(direction) or []:
                for peer in (rule or {}).get(peer_key) or []:
                    peers.setdefault(render_peer(peer), peer)
        return assemble_netpol(manifest.name, manifest.namespace, spec.get('podSelector') or {}, kept,
                               metadata=manifest.metadata, peers=peers)
    if kind == 'Deployment':
        return prune_deployment(manifest, deployment_evidence(manifest, aggregates))
    raise ValueError(f'Oracle cannot refine kind {kind}')

# Cell
def scan_prompt(text: str) -> Tuple[List[AggregatedLog], List[ManifestDoc]]:
    """Aggregates and manifests embedded in fenced blocks, first occurrence wins."""
    aggregates, manifests, seen = [], [], set()
    for lang, body, _, _ in fenced_blocks(text):
        if lang == 'json':
            try:
                agg = load_aggregated(body)
            except (ValueError, KeyError, TypeError):
                continue
            key = ('agg', str(agg.entity), agg.source)
            if key not in seen:
                seen.add(key)
                aggregates.append(agg)
        elif lang in ('yaml', 'yml'):
            try:
                docs = parse_manifest(body)
            except HardeningError:
                continue
            for doc in docs:
                key = ('doc', doc.kind, doc.namespace, doc.name)
                if key not in seen:
                    seen.add(key)
                    manifests.append(doc)
    return aggregates, manifests


class OracleBackend(Backend):
    """Deterministic chain participant deriving least-privilege manifests from the
    aggregates embedded in its prompts.

    Intermediate steps echo every aggregate and manifest they were shown so
    that later steps see them; the final step answers with the oracle manifest.
    """
    backend_id = 'oracle'

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        check_messages(messages)
        text = '\n\n'.join(m.content for m in messages if m.role == 'user')
        header = parse_header(text)
        if header is None:
            raise BackendError('Oracle backend only answers chain prompts')
        aggregates, manifests = scan_prompt(text)
        if header['index'] < header['total']:
            return self.echo(header['step'], aggregates, manifests)
        produced = self.final(TaskKind(header['task']), aggregates, manifests)
        return ('Least-privilege manifests derived from the observed runtime evidence.\n\n'
                f"{fenced(dump_manifests(produced), 'yaml')}\n\n"
                'Justification: every retained rule is evidenced by the aggregated logs; '
                'elements without evidence were removed.')

    def echo(self, step: str, aggregates: List[AggregatedLog], manifests: List[ManifestDoc]) -> str:
        blocks = [f'Analysis for {step}: {len(aggregates)} aggregated logs and {len(manifests)} manifests considered.']
        blocks += [fenced(serialize_aggregated(a), 'json') for a in aggregates]
        blocks += [fenced(m.to_yaml(), 'yaml') for m in manifests]
        return '\n\n'.join(blocks)

    def final(self, task: TaskKind, aggregates: List[AggregatedLog], manifests: List[ManifestDoc]) -> List[ManifestDoc]:
        deployment = next((m for m in manifests if m.kind == 'Deployment'), None)
        if task == TaskKind.ROLE_CREATION:
            return oracle_create_role(aggregates, namespace=deployment.namespace if deployment else None)
        if task == TaskKind.NETPOL_CREATION:
            return [oracle_create_netpol(aggregates, deployment)]
        targets = [m for m in manifests if m.kind == task.target_kind]
        if not targets:
            raise BackendError(f'No {task.target_kind} manifest in the {task.value} prompt')
        return [oracle_refine(m, aggregates) for m in targets]
