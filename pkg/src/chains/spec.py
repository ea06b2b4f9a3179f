__all__ = ['TaskKind', 'ChainOrder', 'PROMPT_MODES', 'EXTERNAL_INPUTS', 'StepInput', 'ChainStep', 'ChainSpec',
           'STEP_CATALOG', 'builtin_chain']

# Cell
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

from .prompts import TEMPLATE_DIR, PromptTemplate, load_template

# Cell
class TaskKind(str, Enum):
    ROLE_CREATION = 'role-create'
    NETPOL_CREATION = 'netpol-create'
    ROLE_REFINEMENT = 'role-refine'
    NETPOL_REFINEMENT = 'netpol-refine'
    DEPLOYMENT_REFINEMENT = 'deploy-refine'

    @property
    def target_kind(self) -> str:
        if self in (TaskKind.ROLE_CREATION, TaskKind.ROLE_REFINEMENT):
            return 'Role'
        if self in (TaskKind.NETPOL_CREATION, TaskKind.NETPOL_REFINEMENT):
            return 'NetworkPolicy'
        return 'Deployment'

    @property
    def target_input(self) -> str:
        """External input holding the manifest under refinement."""
        return {'Role': 'role', 'NetworkPolicy': 'network_policy', 'Deployment': 'deployment'}[self.target_kind]

    @property
    def is_refinement(self) -> bool:
        return self.value.endswith('-refine')


class ChainOrder(str, Enum):
    LOGS_THEN_MANIFEST = 'logs-then-manifest'
    MANIFEST_THEN_LOGS = 'manifest-then-logs'
    ANALYZE_AND_MATCH = 'analyze-and-match'


PROMPT_MODES = ('chain', 'zero-shot', 'cot')
# external input -> 'aggregates' or 'manifests'
EXTERNAL_INPUTS = {'aal': 'aggregates', 'anl': 'aggregates', 'apl': 'aggregates',
                   'deployment': 'manifests', 'role': 'manifests', 'network_policy': 'manifests'}

# Cell
class StepInput(NamedTuple):
    source: str  # 'external' or 'step'
    name: str


@dataclass(frozen=True)
class ChainStep:
    name: str
    template: PromptTemplate
    inputs: Tuple[StepInput, ...]
    expects_manifest: bool = False
    phase: str = 'generate'


@dataclass(frozen=True)
class ChainSpec:
    task: TaskKind
    steps: Tuple[ChainStep, ...]
    order: Optional[ChainOrder] = None
    include_match_step: bool = True
    include_explanations: bool = False
    prompt_mode: str = 'chain'

    def __post_init__(self):
        assert self.steps, 'A chain needs at least one step'
        seen = set()
        for step in self.steps:
            for i in step.inputs:
                assert i.source == 'external' or i.name in seen, f'{step.name} consumes {i.name} before it runs'
            seen.add(step.name)

    @property
    def step_names(self) -> List[str]:
        return [s.name for s in self.steps]

    @property
    def external_inputs(self) -> List[str]:
        names = []
        for step in self.steps:
            names += [i.name for i in step.inputs if i.source == 'external' and i.name not in names]
        return names

# Cell
def _ext(*names: str) -> Tuple[StepInput, ...]:
    return tuple(StepInput('external', n) for n in names)


def _prior(*names: str) -> Tuple[StepInput, ...]:
    return tuple(StepInput('step', n) for n in names)


class _Step(NamedTuple):
    name: str
    phase: str  # logs, manifest, match, validate, recommend, generate
    inputs: Tuple[StepInput, ...]


# Enumerated sequences; the default order of each chain is its listing order.
STEP_CATALOG: Dict[TaskKind, Tuple[_Step, ...]] = {
    TaskKind.ROLE_CREATION: (
        _Step('analyze_aal', 'logs', _ext('aal')),
        _Step('analyze_deployment', 'manifest', _ext('deployment')),
        _Step('create_service_accounts', 'generate', _prior('analyze_aal', 'analyze_deployment')),
        _Step('create_roles', 'generate', _prior('analyze_aal', 'create_service_accounts')),
        _Step('create_role_bindings', 'generate', _prior('create_service_accounts', 'create_roles')),
    ),
    TaskKind.NETPOL_CREATION: (
        _Step('analyze_deployment', 'manifest', _ext('deployment')),
        _Step('analyze_anl', 'logs', _ext('anl')),
        _Step('create_network_policies', 'generate', _prior('analyze_deployment', 'analyze_anl')),
    ),
    TaskKind.ROLE_REFINEMENT: (
        _Step('analyze_aal', 'logs', _ext('aal')),
        _Step('analyze_deployment', 'manifest', _ext('deployment')),
        _Step('analyze_role', 'manifest', _ext('role')),
        _Step('match_role_aal', 'match', _prior('analyze_aal', 'analyze_role')),
        _Step('recommend', 'recommend', _prior('analyze_deployment', 'match_role_aal')),
        _Step('revise_role', 'generate', _prior('recommend') + _ext('role')),
    ),
    TaskKind.NETPOL_REFINEMENT: (
        _Step('analyze_deployment', 'manifest', _ext('deployment')),
        _Step('analyze_anl', 'logs', _ext('anl')),
        _Step('analyze_network_policy', 'manifest', _ext('network_policy')),
        _Step('match_policy_flows', 'match', _prior('analyze_anl', 'analyze_network_policy')),
        _Step('validate_matches', 'validate', _prior('match_policy_flows')),
        _Step('recommend', 'recommend', _prior('analyze_deployment', 'match_policy_flows', 'validate_matches')),
        _Step('revise_network_policy', 'generate', _prior('recommend') + _ext('network_policy')),
    ),
    TaskKind.DEPLOYMENT_REFINEMENT: (
        _Step('analyze_aal', 'logs', _ext('aal')),
        _Step('analyze_apl', 'logs', _ext('apl')),
        _Step('analyze_deployment', 'manifest', _ext('deployment')),
        _Step('match_aal', 'match', _prior('analyze_aal', 'analyze_deployment')),
        _Step('match_apl', 'match', _prior('analyze_apl', 'analyze_deployment')),
        _Step('recommend', 'recommend', _prior('match_aal', 'match_apl')),
        _Step('revise_deployment', 'generate', _prior('recommend') + _ext('deployment')),
    ),
}

# Cell
def _ordered(steps: List[_Step], order: Optional[ChainOrder]) -> List[_Step]:
    if order is None:
        return steps
    logs = [s for s in steps if s.phase == 'logs']
    manifests = [s for s in steps if s.phase == 'manifest']
    rest = [s for s in steps if s.phase not in ('logs', 'manifest')]
    if order == ChainOrder.LOGS_THEN_MANIFEST:
        return logs + manifests + rest
    if order == ChainOrder.MANIFEST_THEN_LOGS:
        return manifests + logs + rest
    # each log analysis is followed by the match steps it enables
    ordered, matches = list(manifests), [s for s in rest if s.phase == 'match']
    for log_step in logs:
        ordered.append(log_step)
        done = {s.name for s in ordered}
        for match in matches:
            if match not in ordered and all(i.source == 'external' or i.name in done for i in match.inputs):
                ordered.append(match)
    return ordered + [s for s in rest if s not in ordered]


def _resolve_inputs(step: _Step, present: List[str], analyses: List[str]) -> Tuple[StepInput, ...]:
    kept = tuple(i for i in step.inputs if i.source == 'external' or i.name in present)
    if step.phase == 'recommend':
        dropped = [i for i in step.inputs if i.source == 'step' and i.name not in present]
        if dropped:
            # without matching, recommendations read the analyses directly
            names = [i.name for i in kept]
            kept += tuple(StepInput('step', a) for a in analyses if a not in names)
    return kept


def builtin_chain(task: Union[TaskKind, str], order: Optional[Union[ChainOrder, str]] = None,
                  include_match_step: bool = True, include_explanations: Optional[bool] = None,
                  prompt_mode: str = 'chain', template_dir: Union[str, Path] = TEMPLATE_DIR) -> ChainSpec:
    """One of the five built-in chains.

    Parameters
    ----------
    task: TaskKind or str
        Chain to build, e.g. 'role-refine'.
    order: ChainOrder or str, optional
        Reorders the analysis steps; None keeps the enumerated sequence.
    include_match_step: bool
        False drops the matching (and match validation) steps of refinement chains.
    include_explanations: bool, optional
        Context notes on aggregates; None enables them for Deployment refinement only.
    prompt_mode: str
        'chain', or 'zero-shot' / 'cot' to collapse the chain into one prompt.
    """
    task = TaskKind(task)
    order = ChainOrder(order) if order is not None else None
    if prompt_mode not in PROMPT_MODES:
        raise ValueError(f'Unknown prompt mode {prompt_mode}')
    if include_explanations is None:
        include_explanations = task == TaskKind.DEPLOYMENT_REFINEMENT

    catalog = list(STEP_CATALOG[task])
    if prompt_mode != 'chain':
        externals = []
        for s in catalog:
            externals += [i.name for i in s.inputs if i.source == 'external' and i.name not in externals]
        name = prompt_mode.replace('-', '_')
        template = load_template(task.value, name, template_dir).with_slots(externals)
        step = ChainStep(name, template, _ext(*externals), expects_manifest=True, phase='generate')
        return ChainSpec(task, (step,), order, include_match_step, include_explanations, prompt_mode)

    if not include_match_step:
        catalog = [s for s in catalog if s.phase not in ('match', 'validate')]
    catalog = _ordered(catalog, order)

    present = [s.name for s in catalog]
    analyses = [s.name for s in catalog if s.phase in ('logs', 'manifest')]
    steps = []
    for i, s in enumerate(catalog):
        inputs = _resolve_inputs(s, present, analyses)
        template = load_template(task.value, s.name, template_dir).with_slots([x.name for x in inputs])
        steps.append(ChainStep(s.name, template, inputs, expects_manifest=i == len(catalog) - 1, phase=s.phase))
    return ChainSpec(task, tuple(steps), order, include_match_step, include_explanations, prompt_mode)
