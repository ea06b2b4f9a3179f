from pathlib import Path

import pytest
import yaml

from src.core.exceptions import ConfigError
from src.experiments.config import config_from_dict, load_config
from tests.conftest import FIXTURES, boutique_dict


def test_paths_resolve_against_base_dir(boutique_config, tmp_path):
    assert boutique_config.inputs.audit == [str(FIXTURES / 'boutique.audit.jsonl')]
    assert boutique_config.inputs.cluster_snapshot == str(FIXTURES / 'cluster-snapshot.json')
    assert boutique_config.aggregates_dir == tmp_path / 'results' / 'aggregates'
    assert boutique_config.backend.kind == 'oracle'
    assert boutique_config.chain.include_match_step is True


def test_single_path_is_wrapped():
    d = boutique_dict('out')
    d['inputs']['audit'] = 'boutique.audit.jsonl'
    assert config_from_dict(d, base_dir=FIXTURES).inputs.audit == [str(FIXTURES / 'boutique.audit.jsonl')]


@pytest.mark.parametrize('change', [
    lambda d: d.update(metrics={'enabled': True}),
    lambda d: d['inputs'].update(syslog=['x']),
    lambda d: d.update(chain=['not', 'a', 'mapping']),
    lambda d: d['inputs'].update(audit=['missing.audit.jsonl']),
    lambda d: d.update(backend={'kind': 'grpc'}),
    lambda d: d.update(backend={'kind': 'replay'}),
])
def test_invalid_configurations(change):
    d = boutique_dict('out')
    change(d)
    with pytest.raises(ConfigError):
        config_from_dict(d, base_dir=FIXTURES)


def test_unchecked_paths():
    d = boutique_dict('out')
    d['inputs']['audit'] = ['missing.audit.jsonl']
    config = config_from_dict(d, base_dir=FIXTURES, check_paths=False)
    assert config.inputs.audit == [str(FIXTURES / 'missing.audit.jsonl')]


def test_load_config(tmp_path):
    d = boutique_dict('results')
    d['inputs'] = {k: ([str(FIXTURES / p) for p in v] if isinstance(v, list) else str(FIXTURES / v))
                   for k, v in d['inputs'].items()}
    d['chain'] = {'order': 'manifest-then-logs', 'iterate': True}
    path = tmp_path / 'pipeline.yaml'
    path.write_text(yaml.safe_dump(d))
    config = load_config(path)
    assert config.output_dir == str(tmp_path / 'results')
    assert config.chain.order == 'manifest-then-logs' and config.chain.iterate


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'absent.yaml')
    path = tmp_path / 'broken.yaml'
    path.write_text('inputs: [unclosed\n')
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text('- a\n- b\n')
    with pytest.raises(ConfigError):
        load_config(path)
    empty = tmp_path / 'empty.yaml'
    empty.write_text('')
    assert Path(load_config(empty).output_dir) == tmp_path / 'results'
