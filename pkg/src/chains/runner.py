__all__ = ['logger', 'REPAIR_MESSAGE', 'ChainInputs', 'ChainRun', 'RefinementResult', 'extract_manifests',
           'external_text', 'run_chain', 'persist_run', 'iterative_refine']

# Cell
import json
import logging
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from tqdm import tqdm

from ..backends.base import Backend, ChatMessage, scrub
from ..core.elements import decompose
from ..core.exceptions import ExtractionError, HardeningError, InputMissingError
from ..core.manifests import ManifestDoc, dump_manifests, parse_manifest
from ..data.aggregation import AggregatedLog, attach_context, serialize_aggregated
from ..evaluation.baseline import source_of
from .prompts import HEADER_FORMAT, fenced, fenced_blocks, render
from .spec import EXTERNAL_INPUTS, ChainSpec, ChainStep

logger = logging.getLogger(__name__)

REPAIR_MESSAGE = ('Your previous answer did not contain a parseable {kind} manifest. Reply again with the complete '
                  'manifest(s) inside a single fenced yaml code block, followed by a short justification of '
                  'every rule you kept.')

MANIFEST_LANGS = ('yaml', 'yml', 'json')
BARE_START = re.compile(r'^apiVersion:', re.M)
TOP_LEVEL_KEYS = ('apiVersion', 'kind', 'metadata', 'spec', 'rules', 'subjects', 'roleRef', 'data',
                  'stringData', 'type', 'secrets', 'imagePullSecrets', 'automountServiceAccountToken')
BARE_LINE = re.compile(r'^([ \t]|- |#|$|(' + '|'.join(TOP_LEVEL_KEYS) + r'):)')

# Cell
@dataclass
class ChainInputs:
    """External inputs of a chain run: aggregates under 'aal', 'anl' and 'apl';
    manifests under 'deployment', 'role' and 'network_policy'."""
    aggregates: Dict[str, List[AggregatedLog]] = field(default_factory=dict)
    manifests: Dict[str, ManifestDoc] = field(default_factory=dict)

    def with_manifest(self, name: str, doc: ManifestDoc) -> 'ChainInputs':
        return replace(self, manifests={**self.manifests, name: doc})


@dataclass
class ChainRun:
    spec: ChainSpec
    backend_id: str
    step_prompts: Dict[str, List[ChatMessage]] = field(default_factory=dict)
    step_outputs: Dict[str, str] = field(default_factory=dict)
    final_manifests: List[ManifestDoc] = field(default_factory=list)
    reasoning: str = ''
    timings: Dict[str, float] = field(default_factory=dict)
    retry_count: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def record_step(self, name: str, messages: List[ChatMessage], output: str, seconds: float) -> None:
        assert name not in self.step_outputs, f'Step {name} already recorded'
        self.step_prompts[name] = list(messages)
        self.step_outputs[name] = output
        self.timings[name] = seconds

    def target_manifest(self) -> Optional[ManifestDoc]:
        kind = self.spec.task.target_kind
        return next((m for m in self.final_manifests if m.kind == kind), None)

    def to_dict(self) -> Dict[str, Any]:
        spec = self.spec
        return {'task': spec.task.value,
                'order': spec.order.value if spec.order else None,
                'includeMatchStep': spec.include_match_step,
                'includeExplanations': spec.include_explanations,
                'promptMode': spec.prompt_mode,
                'backendId': self.backend_id,
                'steps': [{'index': i, 'name': s.name, 'inputs': [x.name for x in s.inputs]}
                          for i, s in enumerate(spec.steps, 1)],
                'retryCount': self.retry_count,
                'finalManifests': [{'kind': m.kind, 'name': m.name, 'namespace': m.namespace}
                                   for m in self.final_manifests],
                'reasoning': self.reasoning,
                'metadata': self.metadata}


@dataclass
class RefinementResult:
    runs: List[ChainRun]
    manifest: ManifestDoc
    converged: bool
    oscillation: bool

# Cell
def _bare_documents(text: str) -> List[tuple]:
    docs = []
    lines = text.splitlines(keepends=True)
    offsets, pos = [], 0
    for line in lines:
        offsets.append(pos)
        pos += len(line)
    i = 0
    while i < len(lines):
        if not BARE_START.match(lines[i]):
            i += 1
            continue
        j = i + 1
        while j < len(lines) and BARE_LINE.match(lines[j]) and not BARE_START.match(lines[j]) \
                and not lines[j].startswith('---'):
            j += 1
        docs.append((offsets[i], ''.join(lines[i:j])))
        i = j
    return docs


def extract_manifests(text: str) -> List[ManifestDoc]:
    """Manifests in fenced yaml/yml/json blocks and bare `apiVersion:` documents.

    Blocks that do not parse as manifests are ignored; documents keep their
    textual order.
    """
    found = []
    masked = list(text)
    for lang, body, start, end in fenced_blocks(text):
        masked[start:end] = ' ' * (end - start)
        if lang in MANIFEST_LANGS:
            found.append((start, body))
    found += _bare_documents(''.join(masked))

    docs = []
    for _, body in sorted(found, key=lambda x: x[0]):
        try:
            docs += parse_manifest(body)
        except HardeningError as e:
            logger.debug(f'Ignoring block that is not a manifest: {e}')
    return docs


def _reasoning(text: str) -> str:
    for _, _, start, end in reversed(fenced_blocks(text)):
        text = text[:start] + text[end:]
    return re.sub(r'\n{3,}', '\n\n', text).strip()

# Cell
def external_text(name: str, inputs: ChainInputs, explanations: bool) -> Optional[str]:
    """Prompt rendering of one external input, None when absent."""
    if EXTERNAL_INPUTS[name] == 'manifests':
        doc = inputs.manifests.get(name)
        return fenced(doc.to_yaml(), 'yaml') if doc is not None else None
    aggregates = inputs.aggregates.get(name)
    if not aggregates:
        return None
    return '\n\n'.join(fenced(serialize_aggregated(attach_context(a, source_of(a), explanations)), 'json')
                       for a in aggregates)


def _complete_step(backend: Backend, messages: List[ChatMessage], step: ChainStep, kind: str, max_retries: int):
    response = backend.complete(messages)
    if not step.expects_manifest:
        return messages, response, [], 0
    for retry in range(max_retries + 1):
        manifests = extract_manifests(response)
        if any(m.kind == kind for m in manifests):
            return messages, response, manifests, retry
        if retry == max_retries:
            break
        logger.warning(f'{step.name}: no {kind} manifest in response, retrying ({retry + 1}/{max_retries})')
        messages = messages + [ChatMessage('assistant', response), ChatMessage('user', REPAIR_MESSAGE.format(kind=kind))]
        response = backend.complete(messages)
    raise ExtractionError(step.name, max_retries + 1)


def run_chain(spec: ChainSpec, inputs: ChainInputs, backend: Backend, max_retries: int = 2) -> ChainRun:
    """Executes the steps of `spec` in order.

    Each step renders its template with its external inputs and the outputs of
    the prior steps it consumes. The final step's manifests are extracted,
    retrying with a format-repair message up to `max_retries` times.
    """
    texts = {}
    for name in spec.external_inputs:
        texts[name] = external_text(name, inputs, spec.include_explanations)
        if texts[name] is None:
            raise InputMissingError(f'{spec.task.value} requires input {name}')

    run = ChainRun(spec=spec, backend_id=backend.backend_id)
    total = len(spec.steps)
    for index, step in enumerate(spec.steps, 1):
        slot_values = {i.name: texts[i.name] if i.source == 'external' else run.step_outputs[i.name]
                       for i in step.inputs}
        header = HEADER_FORMAT.format(task=spec.task.value, index=index, total=total, step=step.name)
        messages = render(step.template, slot_values, header=header,
                          variables={'target_kind': spec.task.target_kind, 'task': spec.task.value})
        started = time.perf_counter()
        messages, response, manifests, retries = _complete_step(backend, messages, step, spec.task.target_kind,
                                                               max_retries)
        run.record_step(step.name, messages, response, time.perf_counter() - started)
        logger.info(f'{spec.task.value} step {index}/{total} {step.name} done')
        if step.expects_manifest:
            run.final_manifests = manifests
            run.reasoning = _reasoning(response)
            run.retry_count += retries
    return run

# Cell
def _messages_text(messages: Sequence[ChatMessage]) -> str:
    return '\n\n'.join(f'[{m.role}]\n{m.content}' for m in messages) + '\n'


def persist_run(run: ChainRun, directory: Union[str, Path], secrets: Sequence[str] = ()) -> Path:
    """Writes step prompts and responses, `final.yaml`, `run.json` and `timings.json`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, name in enumerate(run.step_outputs, 1):
        (directory / f'step{index}.prompt.txt').write_text(scrub(_messages_text(run.step_prompts[name]), secrets))
        (directory / f'step{index}.response.txt').write_text(scrub(run.step_outputs[name], secrets))
    (directory / 'final.yaml').write_text(scrub(dump_manifests(run.final_manifests), secrets))
    (directory / 'run.json').write_text(scrub(json.dumps(run.to_dict(), indent=2, ensure_ascii=False), secrets))
    (directory / 'timings.json').write_text(json.dumps(run.timings, indent=2))
    return directory

# Cell
def iterative_refine(spec: ChainSpec, manifest: ManifestDoc, inputs: ChainInputs, backend: Backend,
                     max_iter: int = 5, max_retries: int = 2) -> RefinementResult:
    """Feeds each iteration's refined manifest back as the next input manifest.

    Stops once two consecutive outputs decompose to the same element set, or
    after `max_iter` runs. An output equal to the one two iterations earlier
    but not to the previous one is flagged as oscillation. Errors carry the
    completed runs as `partial_runs`.
    """
    assert spec.task.is_refinement, f'{spec.task.value} is not a refinement chain'
    assert max_iter >= 1, 'max_iter must be positive'
    runs, history = [], []
    converged = oscillation = False
    current = manifest
    for iteration in tqdm(range(1, max_iter + 1), desc='iterations'):
        try:
            run = run_chain(spec, inputs.with_manifest(spec.task.target_input, current), backend, max_retries)
        except HardeningError as e:
            e.partial_runs = runs
            raise
        output = run.target_manifest()
        elements = decompose(output)
        run.metadata['iteration'] = iteration
        if len(history) >= 2 and elements == history[-2] and elements != history[-1]:
            oscillation = True
            run.metadata['oscillation'] = True
            logger.warning(f'Iteration {iteration} repeats iteration {iteration - 2}')
        runs.append(run)
        current = output
        if history and elements == history[-1]:
            converged = True
            logger.info(f'Refinement stable after {iteration} iterations')
            break
        history.append(elements)
    return RefinementResult(runs=runs, manifest=current, converged=converged, oscillation=oscillation)
