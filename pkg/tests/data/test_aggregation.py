import json
import time

import numpy as np
import pytest

from src.core.exceptions import RecursionLimitError
from src.core.records import EntityKey
from src.data.aggregation import (CONTEXT_NOTES, aggregate_entity, attach_context, count_tokens, kv_aggregate,
                                  load_aggregated, merge_tables, serialize_aggregated, token_reduction)
from src.data.grouping import group_by_entity
from src.data.sources.audit import parse_audit_lines
from tests.conftest import audit_corpus, audit_lines, random_record

ENTITY = EntityKey('microservice', 'cartservice')


def leaf_collector(record):
    """Every (nearest enclosing key, scalar) pair, found with an explicit stack."""
    table, stack = {}, [(record, None)]
    while stack:
        node, key = stack.pop()
        if isinstance(node, dict):
            stack.extend((value, k) for k, value in node.items())
        elif isinstance(node, list):
            stack.extend((value, key) for value in node)
        elif key is not None:
            table.setdefault(key, set()).add(json.dumps(node, ensure_ascii=False))
    return table


def test_matches_brute_force_leaf_collector():
    rng = np.random.RandomState(0)
    started = time.perf_counter()
    for _ in range(1000):
        record = random_record(rng)
        assert kv_aggregate(record) == leaf_collector(record)
    assert time.perf_counter() - started < 10


def test_same_name_keys_merge_across_depths():
    record = {'name': 'a', 'spec': {'name': 'b', 'items': [{'name': 'c'}, 'd', 1, True]}}
    table = kv_aggregate(record)
    assert table['name'] == {'"a"', '"b"', '"c"'}
    assert table['items'] == {'"d"', '1', 'true'}
    assert 'spec' not in table


def test_top_level_scalars_have_no_key():
    assert kv_aggregate([1, 2, {'a': 3}]) == {'a': {'3'}}
    assert kv_aggregate('x') == {}


def test_recursion_limit():
    record = {}
    node = record
    for _ in range(10):
        node['child'] = {}
        node = node['child']
    node['leaf'] = 1
    with pytest.raises(RecursionLimitError):
        kv_aggregate(record, max_depth=5)
    assert kv_aggregate(record, max_depth=10) == {'leaf': {'1'}}


def test_exclude_keys_drop_subtrees():
    table = kv_aggregate({'keep': 1, 'drop': {'keep': 2}}, exclude_keys=['drop'])
    assert table == {'keep': {'1'}}


def test_order_insensitive_and_monotone():
    rng = np.random.RandomState(1)
    records = [random_record(rng) for _ in range(50)]
    agg = aggregate_entity(records, ENTITY)
    shuffled = [records[i] for i in rng.permutation(len(records))]
    assert aggregate_entity(shuffled, ENTITY) == agg
    subset = aggregate_entity(records[:20], ENTITY)
    assert all(values <= agg.table[key] for key, values in subset.table.items())


def test_reaggregation_adds_no_values():
    rng = np.random.RandomState(2)
    agg = aggregate_entity([random_record(rng) for _ in range(30)], ENTITY)
    again = kv_aggregate(json.loads(serialize_aggregated(agg)))
    for key, values in agg.table.items():
        assert again.get(key, set()) <= values


@pytest.mark.parametrize('explanations', [True, False])
def test_reaggregation_ignores_envelope(explanations):
    events = [{'kind': 'Event', 'verb': 'get', 'source': 'kubelet', 'entity': {'id': 'x'}},
              {'kind': 'Event', 'verb': 'list', 'sourceCount': 3}]
    agg = attach_context(aggregate_entity(events, ENTITY), 'audit', explanations=explanations)
    again = kv_aggregate(json.loads(serialize_aggregated(agg)))
    assert again == {key: set(values) for key, values in agg.table.items()}
    assert again['kind'] == {'"Event"'}


def test_records_with_a_table_field_are_not_envelopes():
    table = kv_aggregate({'table': {'name': 'pods'}, 'entity': {'kind': 'x'}, 'verb': 'get'})
    assert table == {'name': {'"pods"'}, 'kind': {'"x"'}, 'verb': {'"get"'}}


@pytest.mark.parametrize('list_scalars, expected', [
    (True, {'verbs': {'"get"', '"list"'}, 'name': {'"a"'}}),
    (False, {'name': {'"a"'}}),
])
def test_list_scalars_switch(list_scalars, expected):
    record = {'verbs': ['get', 'list'], 'rules': [{'name': 'a'}]}
    assert kv_aggregate(record, list_scalars=list_scalars) == expected
    agg = aggregate_entity([record], ENTITY, list_scalars=list_scalars)
    assert set(agg.table) == set(expected)


def test_merge_tables():
    a, b = kv_aggregate({'x': 1}), kv_aggregate({'x': 2, 'y': 'z'})
    assert merge_tables(a, b) == {'x': {'1', '2'}, 'y': {'"z"'}}
    assert a == {'x': {'1'}}


def test_serialization_layout_and_reload():
    agg = attach_context(aggregate_entity([{'verb': 'get', 'code': 200}, {'verb': 'list', 'code': '200'}], ENTITY),
                         'audit', explanations=True)
    text = serialize_aggregated(agg)
    d = json.loads(text)
    assert list(d) == ['contextNote', 'entity', 'source', 'sourceCount', 'table']
    assert d['table'] == {'code': ['200', 200], 'verb': ['get', 'list']}
    assert load_aggregated(text) == agg
    assert serialize_aggregated(load_aggregated(text)) == text


def test_context_defaults():
    agg = aggregate_entity([{'a': 1}], ENTITY)
    assert attach_context(agg, 'audit').context_note is None
    assert attach_context(agg, 'network').context_note == CONTEXT_NOTES['network']
    assert attach_context(agg, 'provenance', explanations=False).context_note is None
    with pytest.raises(ValueError):
        attach_context(agg, 'syslog')


def test_empty_aggregate():
    agg = aggregate_entity([], ENTITY)
    assert agg.source_count == 0 and agg.table == {}
    assert load_aggregated(serialize_aggregated(agg)) == agg


def test_count_tokens():
    assert count_tokens('get pods, list') == 4
    assert count_tokens('') == 0


def test_token_reduction_on_template_corpus():
    started = time.perf_counter()
    lines = audit_lines(audit_corpus(10_000))
    events = parse_audit_lines(lines)
    groups = group_by_entity(events, 'by_microservice_user')
    texts = [serialize_aggregated(attach_context(aggregate_entity(records, key), 'audit'))
             for key, records in groups.items()]
    raw = [record for records in groups.values() for record in records]
    assert len(raw) == 10_000
    assert token_reduction(raw, '\n'.join(texts)) >= 0.99
    assert time.perf_counter() - started < 30


def test_token_reduction_bounds():
    agg = aggregate_entity([{'a': 1}], ENTITY)
    assert token_reduction([], agg) == 0.0
    assert 0.0 <= token_reduction(['a'], agg) <= 1.0
