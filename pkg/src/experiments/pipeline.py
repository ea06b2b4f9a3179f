__all__ = ['logger', 'INDEX_FILE', 'LABELS_DIR', 'load_manifests', 'load_aggregates', 'find_role', 'find_netpol',
           'target_inputs', 'cmd_aggregate', 'cmd_associate', 'cmd_harden', 'cmd_evaluate', 'cmd_converge',
           'cmd_inject']

# Cell
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from tqdm import tqdm

from ..backends.base import Backend
from ..backends.oracle import workload_name
from ..backends.registry import get_backend
from ..chains.runner import ChainInputs, iterative_refine, persist_run, run_chain
from ..chains.spec import TaskKind, builtin_chain
from ..core.elements import decompose
from ..core.exceptions import HardeningError, InputMissingError
from ..core.manifests import ManifestDoc, dump_manifests, load_manifest_dir, parse_manifest
from ..core.records import EntityKey, canonical_json
from ..data.aggregation import (AggregatedLog, aggregate_entity, attach_context, load_aggregated,
                                serialize_aggregated, token_reduction)
from ..data.association import AssociatedRecord, associate, build_index
from ..data.grouping import group_by_entity, sort_events, split_by_microservice
from ..data.sources.audit import audit_entity, parse_audit_lines
from ..data.sources.cluster import load_cluster_snapshot
from ..data.sources.hubble import flow_entity, parse_hubble_flows
from ..data.sources.spade import edge_timestamp, parse_spade_graph
from ..data.sources.utils import SourceInfo, discover_inputs, open_text
from ..evaluation.baseline import RESOURCE_KINDS, ground_truth
from ..evaluation.convergence import convergence_analysis
from ..evaluation.metrics import EvalReport, diff, injected_recall
from ..evaluation.report import timing_stats, write_report
from ..evaluation.taxonomy import (TAXONOMY_FILE, applicable_rules, inject_anti_patterns, load_labels, load_taxonomy,
                                  save_labels)
from .config import PipelineConfig

logger = logging.getLogger(__name__)

INDEX_FILE = 'manifest.index.json'
LABELS_DIR = 'labels'
RESULT_FILE = 'result.json'

# Cell
def _write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + '\n')
    return path


def load_manifests(paths: Sequence[Union[str, Path]]) -> List[ManifestDoc]:
    """Manifests of every configured file or directory, in configuration order."""
    docs = []
    for path in paths:
        path = Path(path)
        docs += load_manifest_dir(path) if path.is_dir() else parse_manifest(path.read_text())
    return docs


def _labels_name(doc: ManifestDoc) -> str:
    return f'{doc.kind.lower()}-{doc.namespace}-{doc.name}'


def _injected_labels(paths: Sequence[Union[str, Path]]) -> Dict[str, Any]:
    """Injection sidecars of the configured manifest directories, by labels name."""
    labels = {}
    for path in paths:
        directory = Path(path) / LABELS_DIR
        if directory.is_dir():
            labels.update({p.stem: load_labels(p) for p in sorted(directory.glob('*.json'))})
    return labels

# Cell
def _parse_logs(paths: Sequence[str], source: str, fatal_threshold: float) -> List[Any]:
    info = SourceInfo[source]
    parser = parse_audit_lines if source == 'audit' else parse_hubble_flows
    events = []
    for path in discover_inputs(paths, info.suffix):
        with open_text(path) as f:
            parsed = parser(f, fatal_threshold=fatal_threshold)
        logger.info(f'{path.name}: {len(parsed)} {source} events')
        events += parsed
    return events


def _associated_records(config: PipelineConfig) -> List[AssociatedRecord]:
    services = load_cluster_snapshot(config.inputs.cluster_snapshot)
    index = build_index(services)
    records = []
    for path in discover_inputs(config.inputs.spade, SourceInfo['provenance'].suffix):
        with open_text(path) as f:
            graph = parse_spade_graph(f.read())
        found = associate(graph, index)
        logger.info(f'{path.name}: {len(found)}/{len(graph.edges)} edges associated')
        records += found
    return records


def _service_names(config: PipelineConfig) -> Optional[List[str]]:
    if config.inputs.cluster_snapshot is None:
        return None
    return [s.name for s in load_cluster_snapshot(config.inputs.cluster_snapshot)]

# Cell
def cmd_aggregate(config: PipelineConfig) -> List[Path]:
    """Parses, groups and aggregates every configured log and writes the aggregate index.

    Layout under the aggregates directory: `aal/<entity>.aal.json`,
    `anl/<pod>.anl.json`, `apl/<microservice>/<event>.apl.json` and
    `manifest.index.json` with the token reduction of each source.
    """
    out = config.aggregates_dir
    agg_cfg = config.aggregation
    services = _service_names(config)

    grouped: Dict[str, List[Tuple[Optional[str], Dict[EntityKey, List[Dict[str, Any]]]]]] = {}
    if config.inputs.audit:
        events = _parse_logs(config.inputs.audit, 'audit', agg_cfg.fatal_threshold)
        grouped['audit'] = [(None, group_by_entity(events, SourceInfo['audit'].scheme, services))]
    if config.inputs.flows:
        events = _parse_logs(config.inputs.flows, 'network', agg_cfg.fatal_threshold)
        grouped['network'] = [(None, group_by_entity(events, SourceInfo['network'].scheme))]
    if config.inputs.spade:
        if config.inputs.cluster_snapshot is None:
            logger.warning('Provenance logs need inputs.cluster_snapshot for association; skipping them')
        else:
            split = split_by_microservice(_associated_records(config))
            grouped['provenance'] = [(ms, group_by_entity(records, SourceInfo['provenance'].scheme))
                                     for ms, records in split.items()]

    entries, reduction, paths = [], {}, []
    for source, groups in grouped.items():
        info = SourceInfo[source]
        raw, texts = [], []
        for microservice, groups_of in groups:
            for entity, records in tqdm(groups_of.items(), desc=f'{source} entities'):
                agg = aggregate_entity(records, entity, max_depth=agg_cfg.max_depth,
                                       exclude_keys=agg_cfg.exclude_keys, list_scalars=agg_cfg.list_scalars)
                agg = attach_context(agg, source, agg_cfg.explanations)
                text = serialize_aggregated(agg)
                folder = Path(info.label) / microservice if microservice else Path(info.label)
                rel = folder / f'{entity.slug}.{info.label}.json'
                (out / rel).parent.mkdir(parents=True, exist_ok=True)
                (out / rel).write_text(text + '\n')
                paths.append(out / rel)
                entry = {'source': source, 'label': info.label, 'entity': entity.to_dict(),
                         'path': rel.as_posix(), 'sourceCount': agg.source_count}
                if microservice:
                    entry['microservice'] = microservice
                entries.append(entry)
                raw += records
                texts.append(text)
        reduction[source] = token_reduction(raw, '\n'.join(texts))
        logger.info(f'{source}: {len(texts)} aggregates, token reduction {reduction[source]:.4f}')

    if not entries:
        logger.warning('No log events found; writing an empty aggregate index')
    index = _write_json(out / INDEX_FILE, {'aggregates': entries, 'tokenReduction': reduction})
    return [index] + paths


def load_aggregates(directory: Union[str, Path]) -> List[Tuple[Dict[str, Any], AggregatedLog]]:
    """Index entries and aggregates written by `cmd_aggregate`."""
    directory = Path(directory)
    index = directory / INDEX_FILE
    if not index.exists():
        raise InputMissingError(f'No aggregate index at {index}; run the aggregate command first')
    entries = json.loads(index.read_text())['aggregates']
    return [(entry, load_aggregated((directory / entry['path']).read_text())) for entry in entries]


def cmd_associate(config: PipelineConfig) -> List[Path]:
    """Writes `associated.jsonl`, one associated provenance record per line."""
    if config.inputs.cluster_snapshot is None:
        raise InputMissingError('associate needs inputs.cluster_snapshot')
    records = _associated_records(config)
    path = Path(config.output_dir) / 'associated.jsonl'
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [canonical_json({'microservice': r.microservice, 'eventType': r.event_type, 'record': r.record})
             for r in records]
    path.write_text(''.join(f'{line}\n' for line in lines))
    logger.info(f'Associated {len(records)} provenance records')
    return [path]

# Cell
def _subset(selector: Dict[str, Any], labels: Dict[str, Any]) -> bool:
    return bool(selector) and all(labels.get(k) == v for k, v in selector.items())


def find_role(manifests: Sequence[ManifestDoc], deployment: ManifestDoc) -> Optional[ManifestDoc]:
    """Role bound to the Deployment's service account, else the Role named after it."""
    account = deployment.get('spec.template.spec.serviceAccountName') or 'default'
    roles = {m.name: m for m in manifests if m.kind == 'Role' and m.namespace == deployment.namespace}
    for binding in (m for m in manifests if m.kind == 'RoleBinding' and m.namespace == deployment.namespace):
        subjects = binding.get('subjects') or []
        if any(s.get('kind') == 'ServiceAccount' and s.get('name') == account for s in subjects):
            name = (binding.get('roleRef') or {}).get('name')
            if name in roles:
                return roles[name]
    name = deployment.name
    return roles.get(name) or roles.get(f'{name}-role') or \
        next((r for r in roles.values() if r.labels.get('app') == name), None)


def find_netpol(manifests: Sequence[ManifestDoc], deployment: ManifestDoc) -> Optional[ManifestDoc]:
    """NetworkPolicy whose podSelector selects the Deployment's Pods."""
    labels = deployment.get('spec.template.metadata.labels') or {}
    policies = [m for m in manifests if m.kind == 'NetworkPolicy' and m.namespace == deployment.namespace]
    for policy in policies:
        if _subset(policy.get('spec.podSelector.matchLabels') or {}, labels):
            return policy
    name = deployment.name
    return next((p for p in policies if p.name in (name, f'{name}-netpol')), None)


def _target_aggregates(aggregates: List[Tuple[Dict[str, Any], AggregatedLog]], target: str) -> Dict[str, list]:
    found = {'aal': [], 'anl': [], 'apl': []}
    for entry, agg in aggregates:
        source = entry['source']
        if source == 'audit' and agg.entity.kind == 'microservice' and agg.entity.id == target:
            found['aal'].append(agg)
        elif source == 'network' and agg.entity.kind == 'pod' and workload_name(agg.entity.id) == target:
            found['anl'].append(agg)
        elif source == 'provenance' and entry.get('microservice') == target:
            found['apl'].append(agg)
    return {k: v for k, v in found.items() if v}


def target_inputs(deployment: ManifestDoc, manifests: Sequence[ManifestDoc],
                  aggregates: List[Tuple[Dict[str, Any], AggregatedLog]]) -> ChainInputs:
    """External chain inputs of the workload a Deployment describes."""
    docs = {'deployment': deployment, 'role': find_role(manifests, deployment),
            'network_policy': find_netpol(manifests, deployment)}
    return ChainInputs(aggregates=_target_aggregates(aggregates, deployment.name),
                       manifests={k: v for k, v in docs.items() if v is not None})


def _deployments(manifests: Sequence[ManifestDoc], targets: Optional[Sequence[str]]) -> List[ManifestDoc]:
    deployments = [m for m in manifests if m.kind == 'Deployment']
    if targets:
        by_name = {d.name: d for d in deployments}
        missing = [t for t in targets if t not in by_name]
        if missing:
            raise InputMissingError(f'No Deployment manifest for targets {missing}')
        return [by_name[t] for t in targets]
    if not deployments:
        raise InputMissingError('No Deployment manifests configured; every chain analyzes the Deployment')
    return deployments

# Cell
def _harden_target(config: PipelineConfig, spec, inputs: ChainInputs, backend: Backend,
                   directory: Path, target: str) -> Path:
    chain = config.chain
    secrets = backend.secrets()
    result = {'task': spec.task.value, 'target': target, 'backendId': backend.backend_id}
    if chain.iterate and spec.task.is_refinement:
        manifest = inputs.manifests.get(spec.task.target_input)
        if manifest is None:
            raise InputMissingError(f'{spec.task.value} requires input {spec.task.target_input}')
        try:
            refined = iterative_refine(spec, manifest, inputs, backend, chain.max_iter, chain.max_retries)
        except HardeningError as e:
            for i, run in enumerate(getattr(e, 'partial_runs', []), 1):
                run.metadata['target'] = target
                persist_run(run, directory / f'iter{i}', secrets)
            raise
        for i, run in enumerate(refined.runs, 1):
            run.metadata['target'] = target
            persist_run(run, directory / f'iter{i}', secrets)
        final = refined.runs[-1].final_manifests
        result.update({'iterations': len(refined.runs), 'converged': refined.converged,
                       'oscillation': refined.oscillation})
        (directory / 'final.yaml').write_text(dump_manifests(final))
        (directory / 'reasoning.txt').write_text(refined.runs[-1].reasoning + '\n')
    else:
        if chain.iterate:
            logger.warning(f'{spec.task.value} is not a refinement task; running it once')
        run = run_chain(spec, inputs, backend, chain.max_retries)
        run.metadata['target'] = target
        persist_run(run, directory, secrets)
        (directory / 'reasoning.txt').write_text(run.reasoning + '\n')
        result['iterations'] = 1
    _write_json(directory / RESULT_FILE, result)
    return directory / 'final.yaml'


def cmd_harden(config: PipelineConfig, task: Union[TaskKind, str], targets: Optional[Sequence[str]] = None,
               run_id: Optional[str] = None, backend: Optional[Backend] = None) -> List[Path]:
    """Runs a prompt chain for every target workload.

    Parameters
    ----------
    config: PipelineConfig
        Inputs, backend and chain toggles.
    task: TaskKind or str
        Chain to run.
    targets: sequence of str, optional
        Deployment names; all configured Deployments when omitted.
    run_id: str, optional
        Run directory name; a UTC timestamp when omitted.
    backend: Backend, optional
        Overrides the configured backend.

    Returns
    -------
    paths: list of Path
        `final.yaml` of every target, under `runs/<run_id>/<task>/<target>/`.
    """
    task = TaskKind(task)
    chain = config.chain
    spec_kwargs = dict(order=chain.order, include_match_step=chain.include_match_step,
                       include_explanations=chain.include_explanations, prompt_mode=chain.prompt_mode)
    if chain.template_dir:
        spec_kwargs['template_dir'] = chain.template_dir
    spec = builtin_chain(task, **spec_kwargs)

    manifests = load_manifests(config.inputs.manifests)
    aggregates = load_aggregates(config.aggregates_dir)
    deployments = _deployments(manifests, targets)
    backend = backend or get_backend(config.backend)

    run_id = run_id or pd.Timestamp.now(tz='UTC').strftime('%Y%m%dT%H%M%SZ')
    base = Path(config.output_dir) / 'runs' / run_id / task.value
    paths = []
    for deployment in tqdm(deployments, desc=f'{task.value} targets'):
        inputs = target_inputs(deployment, manifests, aggregates)
        missing = [n for n in spec.external_inputs if n not in inputs.aggregates and n not in inputs.manifests]
        if missing and not targets:
            logger.warning(f'Skipping {deployment.name}: no {missing} input')
            continue
        paths.append(_harden_target(config, spec, inputs, backend, base / deployment.name, deployment.name))
        logger.info(f'{task.value}: hardened {deployment.name}')
    if not paths:
        raise InputMissingError(f'No target has the inputs {spec.external_inputs} of {task.value}')
    return paths

# Cell
def _durations(directory: Path) -> float:
    return sum(sum(json.loads(p.read_text()).values()) for p in sorted(directory.rglob('timings.json')))


def _baseline(kind: str, target_inputs_: ChainInputs, original: Optional[ManifestDoc],
              references: Optional[List[ManifestDoc]], candidate: ManifestDoc) -> set:
    if references is not None:
        deployment = target_inputs_.manifests['deployment']
        finder = {'Role': find_role, 'NetworkPolicy': find_netpol}.get(kind)
        reference = finder(references, deployment) if finder else \
            next((m for m in references if m.kind == kind and m.name == deployment.name), None)
        if reference is None:
            raise InputMissingError(f'No reference {kind} for {deployment.name}')
        return decompose(reference)
    aggregates = [a for name in ('aal', 'anl', 'apl') for a in target_inputs_.aggregates.get(name, [])]
    return ground_truth(aggregates, kind, reference=original if original is not None else candidate)


def cmd_evaluate(config: PipelineConfig, candidate_dir: Union[str, Path],
                 baseline_source: Optional[Union[str, Path]] = None) -> List[Path]:
    """Scores every hardened target under `candidate_dir`.

    The baseline is the log-derived ground truth of the target's aggregates,
    or the decomposition of reference manifests when `baseline_source` names a
    manifest file or directory. Refined manifests count true negatives against
    their input manifest and report the recall of injected elements when the
    input carries an injection sidecar.
    """
    candidate_dir = Path(candidate_dir)
    manifests = load_manifests(config.inputs.manifests)
    aggregates = load_aggregates(config.aggregates_dir)
    labels = _injected_labels(config.inputs.manifests)
    references = load_manifests([baseline_source]) if baseline_source is not None else None
    deployments = {d.name: d for d in manifests if d.kind == 'Deployment'}

    rows, durations = [], {}
    results = sorted(candidate_dir.rglob(RESULT_FILE))
    if not results:
        logger.warning(f'No hardening results under {candidate_dir}')
    for path in results:
        result = json.loads(path.read_text())
        task, target = TaskKind(result['task']), result['target']
        if target not in deployments:
            raise InputMissingError(f'No Deployment manifest for evaluated target {target}')
        inputs = target_inputs(deployments[target], manifests, aggregates)
        kind = task.target_kind
        final = parse_manifest((path.parent / 'final.yaml').read_text())
        candidates = [m for m in final if m.kind == kind]
        original = inputs.manifests.get(task.target_input) if task.is_refinement else None

        report_results, injected = {}, None
        for candidate in candidates:
            baseline = _baseline(kind, inputs, original, references, candidate)
            report_results[f'{kind}/{candidate.namespace}/{candidate.name}'] = diff(
                decompose(candidate), baseline, decompose(original) if original is not None else None)
            if original is not None and _labels_name(original) in labels:
                injected = injected_recall(decompose(candidate), labels[_labels_name(original)])
        if not candidates:
            logger.warning(f'{path.parent}: no {kind} in final.yaml')
        report = EvalReport(report_results, injected_recall=injected)
        rows.append({'task': task.value, 'target': target, 'run': path.parent.relative_to(candidate_dir).as_posix(),
                     'report': report.to_dict()})
        durations.setdefault(task.value, []).append(_durations(path.parent))

    timings = {task: timing_stats(d) for task, d in durations.items()}
    paths = write_report(Path(config.output_dir) / 'eval', rows, timings)
    logger.info(f'Evaluated {len(rows)} hardened targets')
    return paths

# Cell
def _provenance_stream(config: PipelineConfig) -> List[AssociatedRecord]:
    records = _associated_records(config)
    stamped = []
    for record in records:
        try:
            stamped.append((edge_timestamp(record.record), record))
        except ValueError as e:
            raise ValueError(f'Provenance record of {record.microservice} has no usable timestamp: {e}') from e
    return [r for _, r in sorted(stamped, key=lambda x: x[0])]


def cmd_converge(config: PipelineConfig, n_segments: Optional[int] = None) -> List[Path]:
    """Similarity report (JSON) and plot data (CSV) per configured log type."""
    ev = config.evaluation
    n_segments = n_segments or ev.n_segments
    services = _service_names(config)
    streams = {}
    if config.inputs.audit:
        events = sort_events(_parse_logs(config.inputs.audit, 'audit', config.aggregation.fatal_threshold))
        streams['audit'] = (events, lambda e: audit_entity(e, services))
    if config.inputs.flows:
        events = sort_events(_parse_logs(config.inputs.flows, 'network', config.aggregation.fatal_threshold))
        streams['network'] = (events, flow_entity)
    if config.inputs.spade and config.inputs.cluster_snapshot is not None:
        streams['provenance'] = (_provenance_stream(config), lambda r: EntityKey('event', r.event_type))
    if not streams:
        logger.warning('No log inputs configured for convergence analysis')

    out = Path(config.output_dir) / 'convergence'
    paths = []
    for source, (events, entity_of) in streams.items():
        report = convergence_analysis(events,
                                      n_segments=n_segments, source=source, threshold=ev.threshold,
                                      entity_of=entity_of if ev.group_entities else None,
                                      exclude_keys=config.aggregation.exclude_keys,
                                      list_scalars=config.aggregation.list_scalars)
        paths.append(_write_json(out / f'{source}.similarity.json', report.to_dict()))
        csv = out / f'{source}.similarity.csv'
        report.to_frame().to_csv(csv, index=False)
        paths.append(csv)
    return paths

# Cell
def cmd_inject(config: PipelineConfig, kinds: Optional[Sequence[str]] = None,
               seed: Optional[int] = None) -> List[Path]:
    """Writes excessive copies of the configured manifests.

    Every manifest of `kinds` receives all applicable taxonomy rules; other
    manifests are copied unchanged so the output directory is a complete input
    set. Injected element sets go to `labels/<kind>-<namespace>-<name>.json`.
    """
    kinds = list(kinds or RESOURCE_KINDS)
    seed = config.evaluation.seed if seed is None else seed
    rules = load_taxonomy(config.evaluation.taxonomy or TAXONOMY_FILE)
    out = Path(config.output_dir) / 'injected'
    paths = []
    for doc in load_manifests(config.inputs.manifests):
        if doc.kind in kinds:
            kind_rules = applicable_rules(rules, doc.kind)
            doc, injected = inject_anti_patterns(doc, kind_rules, seed=seed)
            label_path = out / LABELS_DIR / f'{_labels_name(doc)}.json'
            label_path.parent.mkdir(parents=True, exist_ok=True)
            save_labels(label_path, doc.kind, injected, kind_rules)
            logger.info(f'{doc.kind}/{doc.name}: injected {len(injected)} elements')
        path = out / f'{_labels_name(doc)}.yaml'
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(doc.to_yaml())
        paths.append(path)
    return paths
