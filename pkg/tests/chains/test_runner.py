import json

import pytest

from src.backends.oracle import OracleBackend
from src.backends.replay import RecordingBackend, ReplayBackend
from src.chains.runner import ChainInputs, extract_manifests, iterative_refine, persist_run, run_chain
from src.chains.spec import builtin_chain
from src.core.elements import decompose_role
from src.core.exceptions import ExtractionError, InputMissingError
from src.core.manifests import load_manifest_dir
from src.core.records import EntityKey
from src.data.aggregation import aggregate_entity, attach_context
from src.data.grouping import group_by_entity
from src.data.sources.audit import parse_audit_lines
from tests.conftest import CARTSERVICE_PERMISSIONS, FIXTURES, ScriptedBackend, manifest_answer, role_doc

SERVICES = ['cartservice', 'frontend', 'redis-cart']


@pytest.fixture
def cart_inputs():
    events = parse_audit_lines((FIXTURES / 'boutique.audit.jsonl').read_text())
    key = EntityKey('microservice', 'cartservice')
    records = group_by_entity(events, 'by_microservice_user', SERVICES)[key]
    aal = attach_context(aggregate_entity(records, key), 'audit')
    docs = {(d.kind, d.name): d for d in load_manifest_dir(FIXTURES / 'manifests')}
    return ChainInputs(aggregates={'aal': [aal]},
                       manifests={'deployment': docs['Deployment', 'cartservice'],
                                  'role': docs['Role', 'cartservice-role']})


def permissions(doc):
    return {tuple(p) for p in decompose_role(doc)}


# Cell
def test_role_creation_with_oracle(cart_inputs):
    spec = builtin_chain('role-create')
    run = run_chain(spec, cart_inputs, OracleBackend())
    assert list(run.step_outputs) == spec.step_names
    assert [m.kind for m in run.final_manifests] == ['ServiceAccount', 'Role', 'RoleBinding']
    role = run.target_manifest()
    assert role.name == 'cartservice-role' and role.namespace == 'boutique'
    assert permissions(role) == CARTSERVICE_PERMISSIONS
    assert run.retry_count == 0
    assert run.reasoning.startswith('Least-privilege manifests')


def test_prompts_carry_header_and_prior_outputs(cart_inputs):
    backend = ScriptedBackend([manifest_answer(role_doc('r', []))])
    run = run_chain(builtin_chain('role-create'), cart_inputs, backend)
    first = run.step_prompts['analyze_aal'][1].content
    assert first.startswith('Prompt chain: role-create | step 1 of 5: analyze_aal')
    assert '"observedPermission"' in first
    last = run.step_prompts['create_role_bindings'][1].content
    assert 'ok create_roles' in last


def test_missing_input_is_reported(cart_inputs):
    inputs = ChainInputs(aggregates={}, manifests=cart_inputs.manifests)
    with pytest.raises(InputMissingError):
        run_chain(builtin_chain('role-refine'), inputs, OracleBackend())


def test_repair_retry_then_success(cart_inputs):
    backend = ScriptedBackend(['I would remove the secrets rule.', manifest_answer(role_doc('r', []))])
    run = run_chain(builtin_chain('role-create'), cart_inputs, backend)
    assert run.retry_count == 1
    final_prompt = run.step_prompts['create_role_bindings']
    assert [m.role for m in final_prompt] == ['system', 'user', 'assistant', 'user']
    assert 'did not contain a parseable Role manifest' in final_prompt[-1].content


def test_extraction_error_after_retries(cart_inputs):
    backend = ScriptedBackend(['no manifest here'])
    with pytest.raises(ExtractionError) as info:
        run_chain(builtin_chain('role-create'), cart_inputs, backend, max_retries=2)
    assert info.value.attempts == 3
    assert len(backend.calls) == 4 + 3


def test_extract_manifests():
    text = ('Here is the policy.\n\n```yaml\napiVersion: v1\nkind: ServiceAccount\nmetadata:\n  name: a\n```\n\n'
            '```python\nprint(1)\n```\n\n'
            'apiVersion: rbac.authorization.k8s.io/v1\nkind: Role\nmetadata:\n  name: b\nrules: []\n\n'
            'The Role above keeps nothing.\n\n```yaml\nnot: [valid\n```\n')
    docs = extract_manifests(text)
    assert [(d.kind, d.name) for d in docs] == [('ServiceAccount', 'a'), ('Role', 'b')]
    assert extract_manifests('nothing') == []


def test_persist_run_scrubs_secrets(cart_inputs, tmp_path):
    backend = ScriptedBackend([manifest_answer(role_doc('r', [])) + '\nkey sk-test-123'])
    run = run_chain(builtin_chain('role-create'), cart_inputs, backend)
    out = persist_run(run, tmp_path / 'run', secrets=['sk-test-123'])
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted([f'step{i}.{kind}.txt' for i in range(1, 6) for kind in ('prompt', 'response')] +
                           ['final.yaml', 'run.json', 'timings.json'])
    assert all('sk-test-123' not in p.read_text() for p in out.iterdir())
    meta = json.loads((out / 'run.json').read_text())
    assert meta['backendId'] == 'scripted'
    assert [s['name'] for s in meta['steps']] == run.spec.step_names


def test_replay_reproduces_run(cart_inputs, tmp_path):
    spec = builtin_chain('role-refine')
    recorded = run_chain(spec, cart_inputs, RecordingBackend(OracleBackend(), tmp_path / 'transcripts'))
    replayed = run_chain(spec, cart_inputs, ReplayBackend(tmp_path / 'transcripts'))
    first = persist_run(recorded, tmp_path / 'first')
    second = persist_run(replayed, tmp_path / 'second')
    for path in first.iterdir():
        if path.name != 'timings.json':
            assert (second / path.name).read_bytes() == path.read_bytes(), path.name


# Cell
def test_iterative_refinement_converges(cart_inputs):
    spec = builtin_chain('role-refine')
    result = iterative_refine(spec, cart_inputs.manifests['role'], cart_inputs, OracleBackend(), max_iter=5)
    assert result.converged and not result.oscillation
    assert len(result.runs) == 2
    assert permissions(result.manifest) == CARTSERVICE_PERMISSIONS
    assert [r.metadata['iteration'] for r in result.runs] == [1, 2]


def test_iterative_refinement_flags_oscillation(cart_inputs):
    narrow = role_doc('cartservice-role', [{'apiGroups': [''], 'resources': ['secrets'], 'verbs': ['get']}])
    wide = role_doc('cartservice-role', [{'apiGroups': [''], 'resources': ['secrets'], 'verbs': ['get', 'list']}])
    backend = ScriptedBackend([manifest_answer(narrow), manifest_answer(wide)])
    result = iterative_refine(builtin_chain('role-refine'), cart_inputs.manifests['role'], cart_inputs, backend,
                              max_iter=5)
    assert len(result.runs) == 5
    assert result.oscillation and not result.converged
    assert result.runs[2].metadata['oscillation'] is True


def test_refinement_error_keeps_partial_runs(cart_inputs):
    backend = ScriptedBackend([manifest_answer(role_doc('cartservice-role', [])), 'gave up'])
    with pytest.raises(ExtractionError) as info:
        iterative_refine(builtin_chain('role-refine'), cart_inputs.manifests['role'], cart_inputs, backend,
                         max_iter=3, max_retries=0)
    assert len(info.value.partial_runs) == 1
