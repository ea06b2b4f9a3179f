__all__ = ['TEMPLATE_DIR', 'SECTIONS', 'SLOT_TITLES', 'HEADER_FORMAT', 'PromptTemplate', 'parse_template',
           'load_template', 'render', 'fenced', 'fenced_blocks', 'parse_header']

# Cell
import re
from dataclasses import dataclass, replace
from pathlib import Path
from string import Template
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from ..backends.base import ChatMessage
from ..core.exceptions import TemplateError

TEMPLATE_DIR = Path(__file__).parent / 'templates'
SECTIONS = ('role', 'task', 'requirements', 'instructions', 'input', 'expected_output')
SECTION_LINE = re.compile(r'^\[(\w+)\][ \t]*$', re.M)

SLOT_TITLES = {
    'aal': 'Aggregated audit logs (AAL)',
    'anl': 'Aggregated network logs (ANL)',
    'apl': 'Aggregated provenance logs (APL)',
    'deployment': 'Deployment manifest',
    'role': 'Role manifest',
    'network_policy': 'NetworkPolicy manifest',
}

HEADER_FORMAT = 'Prompt chain: {task} | step {index} of {total}: {step}'
HEADER = re.compile(r'Prompt chain: (?P<task>[\w-]+) \| step (?P<index>\d+) of (?P<total>\d+): (?P<step>\w+)')
FENCE = re.compile(r'```[ \t]*(?P<lang>[\w-]*)[^\n]*\n(?P<body>.*?)```', re.S)

# Cell
@dataclass(frozen=True)
class PromptTemplate:
    """Six-part prompt: role (system prompt), task, requirements, instructions,
    input and expected output. `input` is the lead-in printed above the slots."""
    name: str
    system_role: str
    task: str
    requirements: str
    instructions: str
    input: str
    expected_output: str
    input_slots: Tuple[str, ...] = ()

    def with_slots(self, slots: Sequence[str]) -> 'PromptTemplate':
        return replace(self, input_slots=tuple(slots))


def parse_template(text: str, name: str) -> PromptTemplate:
    """Splits a `.tmpl` file on its `[section]` lines; every section is required."""
    parts = SECTION_LINE.split(text)
    sections = {}
    for key, body in zip(parts[1::2], parts[2::2]):
        if key not in SECTIONS:
            raise TemplateError(f'{name}: unknown section [{key}]')
        sections[key] = body.strip()
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise TemplateError(f'{name}: missing sections {missing}')
    return PromptTemplate(name=name, system_role=sections['role'], task=sections['task'],
                          requirements=sections['requirements'], instructions=sections['instructions'],
                          input=sections['input'], expected_output=sections['expected_output'])


def load_template(task: str, step: str, template_dir: Union[str, Path] = TEMPLATE_DIR) -> PromptTemplate:
    """`<task>/<step>.tmpl`, falling back to `common/<step>.tmpl`."""
    template_dir = Path(template_dir)
    for path in (template_dir / task / f'{step}.tmpl', template_dir / 'common' / f'{step}.tmpl'):
        if path.exists():
            return parse_template(path.read_text(), f'{task}/{step}')
    raise TemplateError(f'No template for step {step} of {task} in {template_dir}')

# Cell
def render(template: PromptTemplate, inputs: Mapping[str, Optional[str]], header: str = '',
           variables: Optional[Mapping[str, str]] = None) -> List[ChatMessage]:
    """Fills every input slot and `$name` placeholder, or raises `TemplateError`.

    Returns a system message with the role and one user message holding the
    remaining sections, the inputs under one heading per slot.
    """
    missing = [slot for slot in template.input_slots if not inputs.get(slot)]
    if missing:
        raise TemplateError(f'{template.name}: unfilled input slots {missing}')

    variables = dict(variables or {})

    def fill(text: str) -> str:
        try:
            return Template(text).substitute(variables)
        except (KeyError, ValueError) as e:
            raise TemplateError(f'{template.name}: unresolved placeholder {e}') from e

    blocks = [header] if header else []
    blocks += [f'## Task\n{fill(template.task)}',
               f'## Requirements\n{fill(template.requirements)}',
               f'## Instructions\n{fill(template.instructions)}']
    slots = '\n\n'.join(f"### {SLOT_TITLES.get(s, f'Output of step {s}')}\n{inputs[s].strip()}"
                        for s in template.input_slots)
    blocks.append(f'## Input\n{fill(template.input)}' + (f'\n\n{slots}' if slots else ''))
    blocks.append(f'## Expected output\n{fill(template.expected_output)}')
    return [ChatMessage('system', fill(template.system_role)), ChatMessage('user', '\n\n'.join(blocks))]

# Cell
def fenced(text: str, lang: str) -> str:
    return f'```{lang}\n{text.rstrip()}\n```'


def fenced_blocks(text: str) -> List[Tuple[str, str, int, int]]:
    """(language, body, start, end) of every fenced code block, in textual order."""
    return [(m.group('lang').lower(), m.group('body'), m.start(), m.end()) for m in FENCE.finditer(text)]


def parse_header(text: str) -> Optional[Dict[str, Union[str, int]]]:
    match = HEADER.search(text)
    if match is None:
        return None
    return {'task': match.group('task'), 'index': int(match.group('index')),
            'total': int(match.group('total')), 'step': match.group('step')}
