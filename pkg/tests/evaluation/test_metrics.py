import numpy as np
import pytest

from src.core.elements import DeploymentElement, NetPolElement, RolePermission, decompose
from src.core.exceptions import TypeMismatchError
from src.core.manifests import ManifestDoc, load_manifest_dir
from src.core.records import EntityKey
from src.data.aggregation import AggregatedLog
from src.evaluation.baseline import (deployment_evidence, flow_evidence, ground_truth, permission_evidence,
                                     requires_evidence, restrict_to_evidence)
from src.evaluation.metrics import EvalReport, diff, divide_no_nan, injected_recall, score_manifest
from tests.conftest import FIXTURES, role_doc

GET, LIST, WATCH, DELETE = (RolePermission('', 'pods', v) for v in ('get', 'list', 'watch', 'delete'))


def aggregate(kind, **table):
    source = {'microservice': 'audit', 'pod': 'network', 'event': 'provenance'}[kind]
    return AggregatedLog(entity=EntityKey(kind, 'web'), source=source, source_count=1,
                         table={k: frozenset(v) for k, v in table.items()})


# Cell
def test_hand_checked_scores():
    result = diff({GET, LIST, DELETE}, {GET, LIST, WATCH})
    assert (result.tp, result.fp, result.fn) == (2, 1, 1)
    for score in (result.precision, result.recall, result.f1):
        assert abs(score - 2 / 3) < 1e-12
    assert result.fp_elements == [DELETE] and result.fn_elements == [WATCH]


def test_empty_candidate_scores_zero():
    result = diff(set(), {GET, LIST})
    assert (result.precision, result.recall, result.f1) == (0.0, 0.0, 0.0)
    assert result.empty_candidate


def test_identity_scores_one():
    result = diff({GET, LIST}, {GET, LIST})
    assert (result.precision, result.recall, result.f1) == (1.0, 1.0, 1.0)


def test_true_negatives_need_the_original():
    assert diff({GET}, {GET, LIST}, original={GET, DELETE}).tn == 1
    assert diff({GET}, {GET, LIST}).tn == 0


def test_mixed_element_types_are_rejected():
    with pytest.raises(TypeMismatchError):
        diff({GET}, {NetPolElement('ingress', 'app=a', '80', 'TCP')})


def test_divide_no_nan():
    assert divide_no_nan(1, 0) == 0.0
    assert np.array_equal(divide_no_nan([1, 0, 2], [2, 0, 0]), [0.5, 0.0, 0.0])


def test_report_pools_counts():
    report = EvalReport({'a': diff({GET}, {GET}), 'b': diff({GET, LIST}, {WATCH})}, injected_recall=1.0)
    assert (report.precision, report.recall) == (1 / 3, 0.5)
    d = report.to_dict()
    assert list(d['resources']) == ['a', 'b'] and d['injectedRecall'] == 1.0


def test_injected_recall():
    assert injected_recall({GET}, {LIST, WATCH}) == 1.0
    assert injected_recall({GET, LIST}, {LIST, WATCH}) == 0.5
    assert injected_recall({GET}, set()) == 1.0


def test_score_manifest():
    role = role_doc('r', [{'apiGroups': [''], 'resources': ['pods'], 'verbs': ['get', 'delete']}])
    assert score_manifest(role, {GET}).to_dict()['fpElements'] == [['', 'pods', 'delete']]


# Cell
def test_permission_evidence():
    assert permission_evidence(aggregate('microservice', verb={'"get"', '"list"'}, resource={'"pods"'})) == {GET, LIST}
    assert permission_evidence(aggregate('microservice')) == set()
    denied = aggregate('microservice', verb={'"get"'}, resource={'"pods"'},
                       **{'authorization.k8s.io/decision': {'"forbid"'}})
    assert permission_evidence(denied) == set()
    observed = aggregate('microservice', observedPermission={'"apps|deployments|get"'}, verb={'"delete"'})
    assert permission_evidence(observed) == {RolePermission('apps', 'deployments', 'get')}


def test_flow_evidence():
    anl = aggregate('pod', observedFlow={'"ingress|app=a|80|TCP"', '"ingress|app=b|80|TCP"',
                                         '"ingress|app=a|443|TCP"'})
    evidence = flow_evidence(anl)
    assert len([e for e in evidence if not e.sentinel]) == 3
    assert NetPolElement('egress', 'NONE', '-', '-') in evidence
    assert flow_evidence([]) == {NetPolElement('ingress', 'NONE', '-', '-'), NetPolElement('egress', 'NONE', '-', '-')}


def test_requires_evidence():
    prefix = 'spec.template.spec.containers[server]'
    assert requires_evidence(DeploymentElement(f'{prefix}.securityContext.privileged', True)) == 'never'
    assert requires_evidence(DeploymentElement(f'{prefix}.securityContext.privileged', False)) is None
    assert requires_evidence(DeploymentElement(f'{prefix}.securityContext.runAsUser', 0)) == 'never'
    assert requires_evidence(DeploymentElement(f'{prefix}.securityContext.runAsUser', 1000)) is None
    assert requires_evidence(DeploymentElement(f'{prefix}.ports[8080/TCP]', 8080)) == 'port'
    assert requires_evidence(DeploymentElement(f'{prefix}.securityContext.capabilities.add[NET_ADMIN]',
                                               'NET_ADMIN')) == 'never'
    assert requires_evidence(DeploymentElement(f'{prefix}.image', 'web:v1')) is None


def deployment(volume_path='/var/log/app'):
    return ManifestDoc.from_dict({
        'apiVersion': 'apps/v1', 'kind': 'Deployment', 'metadata': {'name': 'web', 'namespace': 'shop'},
        'spec': {'template': {'spec': {
            'volumes': [{'name': 'logs', 'hostPath': {'path': volume_path}}],
            'containers': [{'name': 'server', 'image': 'web:v1',
                            'ports': [{'containerPort': 8080}, {'containerPort': 9090}],
                            'volumeMounts': [{'name': 'logs', 'mountPath': '/logs'}]}]}}}})


def test_deployment_evidence():
    apl = aggregate('event', **{'dst_path': {'"/logs/app.log"'}, 'src_local port': {'"8080"'}})
    kept = {e.path for e in deployment_evidence(deployment(), apl)}
    prefix = 'spec.template.spec.containers[server]'
    assert kept == {f'{prefix}.image', f'{prefix}.ports[8080/TCP]', f'{prefix}.volumeMounts[logs]',
                    'spec.template.spec.volumes[logs]'}
    unused = {e.path for e in deployment_evidence(deployment(), [])}
    assert unused == {f'{prefix}.image'}


def test_ground_truth_dispatch():
    with pytest.raises(ValueError):
        ground_truth([], 'Deployment')
    with pytest.raises(ValueError):
        ground_truth([], 'Secret')
    assert ground_truth([], 'Role') == set()


def test_restrict_to_evidence_expands_wildcards():
    wildcard = RolePermission('', 'pods', '*')
    assert restrict_to_evidence({wildcard, DELETE}, {GET, LIST}) == {GET, LIST}


@pytest.mark.parametrize('kind, name, extra', [
    ('Role', 'cartservice-role', RolePermission('', 'nodes', 'delete')),
    ('NetworkPolicy', 'cartservice-netpol', NetPolElement('ingress', 'app=attacker', '22', 'TCP')),
])
def test_swapping_candidate_and_baseline_trades_fp_and_fn(kind, name, extra):
    doc = next(d for d in load_manifest_dir(FIXTURES / 'manifests') if d.kind == kind and d.name == name)
    baseline = decompose(doc)
    missing = sorted(baseline, key=repr)[0]
    candidate = (baseline - {missing}) | {extra}
    forward, swapped = diff(candidate, baseline), diff(baseline, candidate)
    assert swapped.tp == forward.tp == len(baseline) - 1
    assert (swapped.fp, swapped.fn) == (forward.fn, forward.fp) == (1, 1)
    assert (swapped.fp_elements, swapped.fn_elements) == ([missing], [extra])
    assert (swapped.precision, swapped.recall) == (forward.recall, forward.precision)
    assert swapped.f1 == pytest.approx(forward.f1)
