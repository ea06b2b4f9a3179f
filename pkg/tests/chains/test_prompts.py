import pytest

from src.chains.prompts import (HEADER_FORMAT, fenced, fenced_blocks, load_template, parse_header, parse_template,
                                render)
from src.chains.spec import TaskKind, builtin_chain
from src.core.exceptions import TemplateError

TEMPLATE = """[role]
You harden $target_kind manifests.

[task]
Review the inputs for the $task task.

[requirements]
Keep evidenced rules only.

[instructions]
Think step by step.

[input]
The inputs follow.

[expected_output]
A fenced yaml block.
"""


def test_parse_and_render():
    template = parse_template(TEMPLATE, 'demo').with_slots(['aal', 'step1'])
    messages = render(template, {'aal': '```json\n{}\n```', 'step1': 'earlier analysis'},
                      header=HEADER_FORMAT.format(task='role-refine', index=2, total=6, step='demo'),
                      variables={'target_kind': 'Role', 'task': 'role-refine'})
    assert [m.role for m in messages] == ['system', 'user']
    assert messages[0].content == 'You harden Role manifests.'
    user = messages[1].content
    assert user.startswith('Prompt chain: role-refine | step 2 of 6: demo')
    assert '### Aggregated audit logs (AAL)\n```json' in user
    assert '### Output of step step1\nearlier analysis' in user
    assert user.index('## Input') < user.index('## Expected output')


def test_unfilled_slot_and_placeholder():
    template = parse_template(TEMPLATE, 'demo').with_slots(['aal'])
    with pytest.raises(TemplateError):
        render(template, {'aal': ''}, variables={'target_kind': 'Role', 'task': 't'})
    with pytest.raises(TemplateError):
        render(template, {'aal': 'x'}, variables={'target_kind': 'Role'})


def test_template_sections_are_checked():
    with pytest.raises(TemplateError):
        parse_template(TEMPLATE.replace('[requirements]', ''), 'demo')
    with pytest.raises(TemplateError):
        parse_template(TEMPLATE + '\n[examples]\nnone\n', 'demo')


def test_load_template_falls_back_to_common(tmp_path):
    assert load_template('role-refine', 'analyze_aal').name == 'role-refine/analyze_aal'
    with pytest.raises(TemplateError):
        load_template('role-refine', 'analyze_aal', template_dir=tmp_path)


@pytest.mark.parametrize('task', [t.value for t in TaskKind])
@pytest.mark.parametrize('mode', ['chain', 'zero-shot', 'cot'])
def test_builtin_templates_render(task, mode):
    spec = builtin_chain(task, prompt_mode=mode)
    for step in spec.steps:
        messages = render(step.template, {i.name: 'x' for i in step.inputs},
                          variables={'target_kind': spec.task.target_kind, 'task': task})
        assert all(m.content and '$' not in m.content for m in messages)


def test_fenced_blocks():
    text = f"intro\n{fenced('a: 1', 'YAML')}\nmiddle\n```\nplain\n```\n"
    blocks = fenced_blocks(text)
    assert [(lang, body) for lang, body, _, _ in blocks] == [('yaml', 'a: 1\n'), ('', 'plain\n')]
    _, _, start, end = blocks[0]
    assert text[start:end] == '```YAML\na: 1\n```'


def test_parse_header():
    text = 'preamble\n' + HEADER_FORMAT.format(task='netpol-create', index=3, total=3,
                                               step='create_network_policies')
    assert parse_header(text) == {'task': 'netpol-create', 'index': 3, 'total': 3, 'step': 'create_network_policies'}
    assert parse_header('no header here') is None
