import gzip
import json
import logging

import numpy as np
import pytest

from src.core.exceptions import DanglingEdgeError, FatalFormatError, HardeningError, ProvenanceSyntaxError
from src.core.manifests import parse_manifest
from src.core.records import UNATTRIBUTED, EntityKey
from src.data.sources.audit import audit_entity, parse_audit_lines
from src.data.sources.cluster import load_cluster_snapshot, snapshot_from_dict
from src.data.sources.hubble import flow_entity, parse_hubble_flows, parse_labels, split_observed_flow
from src.data.sources.spade import edge_timestamp, parse_spade_graph
from src.data.sources.utils import SourceInfo, discover_inputs, open_text
from tests.conftest import FIXTURES, audit_corpus, audit_lines, random_record

SERVICES = ['cartservice', 'frontend', 'redis-cart']


def fixture_text(name):
    return (FIXTURES / name).read_text()


# Audit
def test_fixture_audit_skips_truncated_line():
    events = parse_audit_lines(fixture_text('boutique.audit.jsonl'))
    assert len(events) == 11
    assert all(e.timestamp.tzinfo is not None for e in events)


def test_audit_attribution():
    events = parse_audit_lines(fixture_text('boutique.audit.jsonl'))
    entities = {audit_entity(e, SERVICES) for e in events}
    assert entities == {EntityKey('microservice', 'cartservice'), EntityKey('microservice', 'frontend'),
                        EntityKey('user', 'system:kube-scheduler'), EntityKey('user', 'system:anonymous')}


def test_service_account_token_match():
    event = parse_audit_lines(audit_lines(audit_corpus(1)))[0]
    user = event.user.rsplit(':', 1)[-1]
    assert audit_entity(event) == EntityKey('microservice', user)
    assert audit_entity(event, []) == EntityKey('user', event.user)


def test_forbidden_request_is_not_evidence():
    events = parse_audit_lines(fixture_text('boutique.audit.jsonl'))
    create = next(e for e in events if e.verb == 'create')
    assert not create.allowed
    assert create.observed_permission() is None
    cart = {e.observed_permission() for e in events if audit_entity(e, SERVICES).id == 'cartservice'}
    assert cart - {None} == {'|configmaps|get', '|endpoints|list', '|endpoints|watch', '|secrets|get'}


def test_missing_object_ref_keeps_event():
    events = parse_audit_lines(fixture_text('boutique.audit.jsonl'))
    health = next(e for e in events if e.user == 'system:anonymous')
    assert health.resource == ''
    assert health.observed_permission() is None


def test_missing_object_refs_are_summarized(caplog):
    line = json.dumps({'verb': 'get', 'user': {'username': 'system:anonymous'},
                       'requestReceivedTimestamp': '2024-05-01T10:00:00Z'})
    with caplog.at_level(logging.INFO, logger='src.data.sources.audit'):
        events = parse_audit_lines('\n'.join([line] * 50))
    assert len(events) == 50
    warnings = [r.getMessage() for r in caplog.records if r.levelno == logging.WARNING and 'objectRef' in r.getMessage()]
    assert warnings == ['audit: 50/50 events have no objectRef, resource left empty']


def test_fatal_threshold():
    good = audit_lines(audit_corpus(2))
    with pytest.raises(FatalFormatError) as info:
        parse_audit_lines(good + 'not json\n{"verb": 1}\n[1, 2]\n')
    assert (info.value.failed, info.value.total) == (3, 5)
    # exactly half malformed is tolerated
    assert len(parse_audit_lines(good + 'x\ny\n')) == 2


def test_gzip_input(tmp_path):
    path = tmp_path / 'cluster.audit.jsonl.gz'
    with gzip.open(path, 'wt') as f:
        f.write(audit_lines(audit_corpus(3)))
    (tmp_path / 'notes.txt').write_text('ignored')
    found = discover_inputs([tmp_path], SourceInfo['audit'].suffix)
    assert found == [path]
    with open_text(path) as f:
        assert len(parse_audit_lines(f)) == 3


# Hubble
def test_parse_labels():
    assert parse_labels(['k8s:app=frontend', 'reserved:world', 'plain=1']) == \
        {'app': 'frontend', 'reserved': 'world', 'plain': '1'}


def test_fixture_flows():
    events = parse_hubble_flows(fixture_text('boutique.flows.jsonl'))
    assert len(events) == 8
    by_pod = {}
    for e in events:
        by_pod.setdefault(flow_entity(e).id, set()).add(e.observed_flow())
    assert by_pod['cartservice-6d9b8c7f4-x2kqp'] - {None} == {
        'ingress|app=frontend|7070|TCP',
        'egress|app=redis-cart|6379|TCP',
        'egress|ns:kubernetes.io/metadata.name=kube-system;k8s-app=kube-dns|53|UDP',
    }
    assert by_pod['frontend-7c9b6d8f5-q8w2z'] == {'egress|app=cartservice|7070|TCP'}
    assert by_pod['redis-cart-5b7f8c9d6-k7m4p'] == {'ingress|app=cartservice|6379|TCP'}


def test_split_observed_flow_keeps_selector_pipes():
    assert split_observed_flow('ingress|tier In (a|b)|80|TCP') == ('ingress', 'tier In (a|b)', '80', 'TCP')


def test_world_subject_is_unattributed():
    line = json.dumps({'flow': {'time': '2024-05-01T10:00:00Z', 'verdict': 'FORWARDED',
                                'traffic_direction': 'EGRESS', 'l4': {'TCP': {'destination_port': 443}},
                                'source': {'labels': ['reserved:host']}, 'destination': {'labels': []}}})
    event = parse_hubble_flows(line)[0]
    assert flow_entity(event) == EntityKey('pod', UNATTRIBUTED)


def test_flow_without_direction_is_skipped():
    line = json.dumps({'flow': {'time': '2024-05-01T10:00:00Z', 'l4': {'UDP': {'destination_port': 53}}}})
    assert parse_hubble_flows(line, fatal_threshold=1.0) == []


# SPADE
def test_fixture_graph():
    graph = parse_spade_graph(fixture_text('boutique.spade.json'))
    assert len(graph.vertices) == 6 and len(graph.edges) == 5
    assert [e.event_type for e in graph.edges] == ['read', 'connect', 'write', 'write', 'read']
    src, dst = graph.endpoints(graph.edges[0])
    assert (src.kind, dst.kind) == ('process', 'artifact')


def test_graph_variants():
    lines = ('{"type": "Process", "id": "1", "annotations": {"name": "sh"}},\n'
             '{"type": "Artifact", "id": "2", "annotations": {}},\n'
             '{"type": "Used", "from": "1", "to": "2", "annotations": {"time": "2024-05-01T10:00:00Z"}}\n')
    graph = parse_spade_graph(lines)
    assert graph.edges[0].event_type == 'Used'
    wrapped = parse_spade_graph(json.dumps({'vertices': [{'type': 'Agent', 'id': 'u'}], 'edges': []}))
    assert wrapped.vertex('u').kind == 'agent'


def test_dangling_and_duplicate_vertices():
    with pytest.raises(DanglingEdgeError):
        parse_spade_graph('[{"type": "Process", "id": "1"}, {"type": "Used", "from": "1", "to": "9"}]')
    with pytest.raises(ProvenanceSyntaxError):
        parse_spade_graph('[{"type": "Process", "id": "1"}, {"type": "Process", "id": "1"}]')
    with pytest.raises(ProvenanceSyntaxError):
        parse_spade_graph('[{"type": "Socket", "id": "1"}]')


@pytest.mark.parametrize('text', ['{"vertices": 5}', '{"edges": "x"}', '{"vertices": {"id": "1"}, "edges": []}',
                                  '{"vertices": [5]}', '[1, 2]', '"graph"', '{"vertices": [], "edges": [[]]}'])
def test_malformed_graph_documents(text):
    with pytest.raises(ProvenanceSyntaxError):
        parse_spade_graph(text)


def test_edge_timestamp_formats():
    epoch = edge_timestamp({'time': '1714557600.5'})
    assert epoch == edge_timestamp({'time': '2024-05-01T10:00:00.5Z'})
    with pytest.raises(ValueError):
        edge_timestamp({})


# Cluster snapshot
def test_cluster_snapshot():
    services = load_cluster_snapshot(FIXTURES / 'cluster-snapshot.json')
    assert [s.name for s in services] == ['frontend', 'cartservice', 'redis-cart']
    cart = services[1]
    assert cart.ports == frozenset({(7070, 'TCP')})
    assert cart.label_map == {'app': 'cartservice'}
    with pytest.raises(ValueError):
        snapshot_from_dict({'services': [{'name': 'a'}, {'name': 'a'}]})


# Robustness
def test_fuzzed_bytes_never_crash_ingestion():
    rng = np.random.RandomState(7)
    valid = fixture_text('boutique.audit.jsonl').encode() + fixture_text('boutique.flows.jsonl').encode()
    for trial in range(300):
        if trial % 2:
            data = rng.bytes(rng.randint(1, 2000))
        else:
            mutated = bytearray(valid)
            for pos in rng.randint(0, len(mutated), size=rng.randint(1, 40)):
                mutated[pos] = rng.randint(0, 256)
            data = bytes(mutated)
        for parser in (parse_audit_lines, parse_hubble_flows):
            try:
                assert isinstance(parser(data), list)
            except FatalFormatError:
                pass
            assert isinstance(parser(data, fatal_threshold=1.0), list)
        try:
            parse_spade_graph(data)
        except HardeningError:
            pass
        if trial % 2:
            try:
                parse_manifest(data)
            except HardeningError:
                pass


def test_fuzzed_graph_shapes_raise_provenance_errors():
    rng = np.random.RandomState(11)
    for _ in range(300):
        doc = {'vertices': random_record(rng, depth=3), 'edges': random_record(rng, depth=3)}
        try:
            parse_spade_graph(json.dumps(doc))
        except ProvenanceSyntaxError:
            pass
