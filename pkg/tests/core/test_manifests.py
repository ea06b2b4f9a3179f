import pytest

from src.core.exceptions import ManifestSyntaxError, MissingFieldError
from src.core.manifests import ManifestDoc, dump_manifests, load_manifest_dir, parse_manifest
from tests.conftest import FIXTURES

ROLE_YAML = """\
apiVersion: rbac.authorization.k8s.io/v1
kind: Role
metadata:
  namespace: boutique
  name: reader
rules:
  - verbs: [get, list]
    resources: [pods]
    apiGroups: [""]
"""


def test_parse_multi_document_keeps_order():
    text = ROLE_YAML + '---\napiVersion: v1\nkind: ServiceAccount\nmetadata:\n  name: reader\n---\n'
    docs = parse_manifest(text)
    assert [d.kind for d in docs] == ['Role', 'ServiceAccount']
    assert docs[0].namespace == 'boutique'
    assert docs[1].namespace == 'default'


def test_parse_json_and_list_expansion():
    text = ('{"apiVersion": "v1", "kind": "List", "items": ['
            '{"apiVersion": "v1", "kind": "ServiceAccount", "metadata": {"name": "a"}},'
            '{"apiVersion": "v1", "kind": "ServiceAccount", "metadata": {"name": "b"}}]}')
    assert [d.name for d in parse_manifest(text)] == ['a', 'b']


def test_empty_text_has_no_documents():
    assert parse_manifest('') == []
    assert parse_manifest(b'   \n') == []


def test_invalid_yaml_reports_position():
    with pytest.raises(ManifestSyntaxError) as info:
        parse_manifest('kind: Role\nmetadata: {name: [x\n')
    assert info.value.line is not None and info.value.line >= 1
    assert info.value.column is not None


def test_non_mapping_document():
    with pytest.raises(MissingFieldError):
        parse_manifest('- a\n- b\n')


@pytest.mark.parametrize('doc', [{'metadata': {'name': 'x'}},
                                 {'kind': 'Role'},
                                 {'kind': 'Role', 'metadata': {'namespace': 'boutique'}}])
def test_missing_kind_or_name(doc):
    with pytest.raises(MissingFieldError):
        ManifestDoc.from_dict(doc)


def test_canonical_form_sorts_keys_and_copies():
    raw = {'kind': 'Role', 'apiVersion': 'rbac.authorization.k8s.io/v1',
           'metadata': {'name': 'r', 'labels': {'z': '1', 'a': '2'}}, 'rules': []}
    doc = ManifestDoc.from_dict(raw)
    raw['metadata']['name'] = 'changed'
    assert doc.name == 'r'
    assert list(doc.to_dict()) == ['apiVersion', 'kind', 'metadata', 'rules']
    assert list(doc.metadata['labels']) == ['a', 'z']


def test_dump_then_parse_is_stable():
    docs = parse_manifest(ROLE_YAML)
    text = dump_manifests(docs)
    assert dump_manifests(parse_manifest(text)) == text
    assert parse_manifest(text)[0].to_dict() == docs[0].to_dict()


def test_get_returns_copies():
    doc = parse_manifest(ROLE_YAML)[0]
    rules = doc.get('rules')
    rules.append({'verbs': ['*']})
    assert len(doc.get('rules')) == 1
    assert doc.get('spec.missing', 'fallback') == 'fallback'


def test_load_fixture_directory():
    docs = load_manifest_dir(FIXTURES / 'manifests')
    assert len(docs) == 12
    assert sum(d.kind == 'Deployment' for d in docs) == 3
    assert not any(d.is_other for d in docs)
