__all__ = ['get_backend', 'complete']

# Cell
from typing import Sequence

from ..core.exceptions import ConfigError
from .base import Backend, BackendConfig, ChatMessage
from .http import HttpBackend
from .oracle import OracleBackend
from .replay import RecordingBackend, ReplayBackend

# Cell
def get_backend(config: BackendConfig) -> Backend:
    if config.kind == 'http':
        backend = HttpBackend(config)
    elif config.kind == 'oracle':
        backend = OracleBackend()
    elif config.kind == 'replay':
        return ReplayBackend(config.replay_dir or config.record_dir)
    else:
        raise ConfigError(f'Unknown backend {config.kind}')
    if config.record_dir:
        backend = RecordingBackend(backend, config.record_dir)
    return backend


def complete(messages: Sequence[ChatMessage], config: BackendConfig) -> str:
    return get_backend(config).complete(messages)
