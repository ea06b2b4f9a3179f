import itertools
import json
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pytest

from src.backends.base import Backend, ChatMessage
from src.chains.prompts import fenced, parse_header
from src.core.manifests import ManifestDoc, dump_manifests
from src.experiments.config import config_from_dict

FIXTURES = Path(__file__).resolve().parents[1] / 'data' / 'fixtures' / 'boutique'

CARTSERVICE_PERMISSIONS = {('', 'configmaps', 'get'), ('', 'endpoints', 'list'), ('', 'endpoints', 'watch'),
                           ('', 'secrets', 'get')}


def boutique_dict(output_dir) -> dict:
    return {'output_dir': str(output_dir),
            'inputs': {'audit': ['boutique.audit.jsonl'], 'flows': ['boutique.flows.jsonl'],
                       'spade': ['boutique.spade.json'], 'cluster_snapshot': 'cluster-snapshot.json',
                       'manifests': ['manifests']},
            'backend': {'kind': 'oracle'}}


@pytest.fixture
def boutique_config(tmp_path):
    return config_from_dict(boutique_dict(tmp_path / 'results'), base_dir=FIXTURES)


# Cell
class ScriptedBackend(Backend):
    """Answers intermediate chain steps with a short note and cycles through
    `finals` on every final step."""
    backend_id = 'scripted'

    def __init__(self, finals: Sequence[str]):
        self.finals = itertools.cycle(finals)
        self.calls: List[List[ChatMessage]] = []

    def complete(self, messages):
        self.calls.append(list(messages))
        user = [m.content for m in messages if m.role == 'user']
        header = parse_header(user[0])
        if header is not None and header['index'] < header['total']:
            return f"ok {header['step']}"
        return next(self.finals)

    def secrets(self):
        return []


def manifest_answer(*docs: ManifestDoc) -> str:
    return f"Revised manifest:\n\n{fenced(dump_manifests(docs), 'yaml')}\n\nDone."


def role_doc(name: str, rules: list, namespace: str = 'boutique') -> ManifestDoc:
    return ManifestDoc.from_dict({'apiVersion': 'rbac.authorization.k8s.io/v1', 'kind': 'Role',
                                  'metadata': {'name': name, 'namespace': namespace}, 'rules': rules})


# Cell
def random_record(rng: np.random.RandomState, depth: int = 6, budget: List[int] = None):
    """Random JSON value of bounded depth drawing keys from a small pool so that
    same-name keys recur at different depths."""
    budget = budget if budget is not None else [200]
    budget[0] -= 1
    scalars = [None, True, False, 0, 1, -3, 2.5, 1.0, '', 'a', 'b', '1', 'true', 'ü']
    if depth == 0 or budget[0] <= 0 or rng.rand() < 0.3:
        return scalars[rng.randint(len(scalars))]
    if rng.rand() < 0.5:
        return [random_record(rng, depth - 1, budget) for _ in range(rng.randint(0, 4))]
    keys = ['k', 'name', 'value', 'x', 'y', 'verb']
    return {keys[rng.randint(len(keys))]: random_record(rng, depth - 1, budget) for _ in range(rng.randint(0, 4))}


AUDIT_TEMPLATES = [(user, verb, resource)
                   for user in ('cartservice', 'frontend', 'checkout', 'currency')
                   for verb, resource in (('get', 'configmaps'), ('list', 'endpoints'), ('watch', 'endpoints'),
                                          ('get', 'secrets'), ('list', 'services'))]


def audit_event(i: int, template: tuple) -> dict:
    user, verb, resource = template
    return {'kind': 'Event', 'apiVersion': 'audit.k8s.io/v1', 'level': 'Metadata',
            'auditID': f'00000000-0000-0000-0000-{i % 7:012d}', 'stage': 'ResponseComplete',
            'requestURI': f'/api/v1/namespaces/boutique/{resource}', 'verb': verb,
            'user': {'username': f'system:serviceaccount:boutique:{user}',
                     'groups': ['system:serviceaccounts', 'system:authenticated']},
            'sourceIPs': [f'10.244.0.{10 + i % 5}'], 'userAgent': f'{user}/v0.8.0',
            'objectRef': {'resource': resource, 'namespace': 'boutique', 'apiVersion': 'v1'},
            'responseStatus': {'metadata': {}, 'code': 200},
            'requestReceivedTimestamp': f'2024-05-01T10:00:{i % 10:02d}.000000Z',
            'annotations': {'authorization.k8s.io/decision': 'allow', 'authorization.k8s.io/reason': 'RBAC'}}


def audit_corpus(n: int, seed: int = 0) -> List[dict]:
    rng = np.random.RandomState(seed)
    return [audit_event(i, AUDIT_TEMPLATES[rng.randint(len(AUDIT_TEMPLATES))]) for i in range(n)]


def audit_lines(events: Sequence[dict]) -> str:
    return ''.join(json.dumps(e) + '\n' for e in events)
