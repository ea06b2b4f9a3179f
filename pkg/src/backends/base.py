__all__ = ['ROLES', 'BACKEND_KINDS', 'ChatMessage', 'BackendConfig', 'Backend', 'check_messages', 'prompt_hash',
           'scrub']

# Cell
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence

from typing_extensions import Literal

from ..core.exceptions import ConfigError
from ..core.records import content_hash

ROLES = ('system', 'user', 'assistant')
BACKEND_KINDS = ('http', 'oracle', 'replay')

# Cell
@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f'Unknown chat role {self.role}')

    def to_dict(self) -> Dict[str, str]:
        return {'role': self.role, 'content': self.content}

# Cell
@dataclass
class BackendConfig:
    """
    Args:
        kind (str): 'http', 'oracle' or 'replay'.
        endpoint_url (str): chat-completions URL (http only).
        model_name (str): model sent in the request body (http only).
        temperature (float): sampling temperature, 0 by default.
        max_tokens (int): completion budget per request.
        timeout (float): seconds per HTTP request.
        api_key_env (str): name of the environment variable holding the bearer token.
        record_dir (str): directory where transcripts are recorded.
        replay_dir (str): directory served by the replay backend.
        seed (int): sampling seed sent with every request, None to omit.
        max_in_flight (int): concurrent HTTP requests allowed.
        max_attempts (int): attempts per request on timeouts, rate limits and 5xx.
        backoff_base (float): first retry delay in seconds, doubled per attempt.
        backoff_cap (float): upper bound of a retry delay.
    """
    kind: Literal['http', 'oracle', 'replay'] = 'oracle'
    endpoint_url: Optional[str] = None
    model_name: Optional[str] = None
    temperature: float = 0.0
    max_tokens: int = 4096
    timeout: float = 120.0
    api_key_env: Optional[str] = None
    record_dir: Optional[str] = None
    replay_dir: Optional[str] = None
    seed: Optional[int] = 0
    max_in_flight: int = 4
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_cap: float = 60.0

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f'Unknown backend kind {self.kind}')
        if self.kind == 'http' and not (self.endpoint_url and self.model_name):
            raise ConfigError('http backend requires endpoint_url and model_name')
        if self.kind == 'replay' and not (self.replay_dir or self.record_dir):
            raise ConfigError('replay backend requires replay_dir')

    def to_dict(self) -> Dict[str, Any]:
        # holds the variable name only, never the key
        return asdict(self)

# Cell
class Backend:
    """Completion interface shared by every backend."""
    backend_id = 'backend'

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        raise NotImplementedError

    def secrets(self) -> List[str]:
        return []


def check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError('At least one message is required')
    for i, message in enumerate(messages):
        if message.role == 'system' and i > 0:
            raise ValueError('Only the first message may have the system role')


def prompt_hash(messages: Sequence[ChatMessage]) -> str:
    return content_hash([m.to_dict() for m in messages])


def scrub(text: str, secrets: Iterable[str]) -> str:
    for secret in secrets:
        if secret:
            text = text.replace(secret, '***')
    return text
