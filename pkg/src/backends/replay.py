__all__ = ['BACKEND_FILE', 'ReplayBackend', 'RecordingBackend']

# Cell
import json
import logging
from pathlib import Path
from typing import List, Sequence, Union

from ..core.exceptions import ReplayMissError
from .base import Backend, ChatMessage, check_messages, prompt_hash, scrub

logger = logging.getLogger(__name__)

BACKEND_FILE = 'backend.json'

# Cell
class ReplayBackend(Backend):
    """Serves responses recorded by `RecordingBackend`, keyed by prompt hash."""

    def __init__(self, record_dir: Union[str, Path]):
        self.record_dir = Path(record_dir)
        meta = self.record_dir / BACKEND_FILE
        self.backend_id = json.loads(meta.read_text())['backend_id'] if meta.exists() else 'replay'

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        check_messages(messages)
        key = prompt_hash(messages)
        path = self.record_dir / f'{key}.json'
        if not path.exists():
            raise ReplayMissError(f'No recorded response for prompt {key[:12]} in {self.record_dir}')
        return json.loads(path.read_text())['response']


class RecordingBackend(Backend):
    """Wraps a backend and stores every exchange as `<prompt-hash>.json`."""

    def __init__(self, inner: Backend, record_dir: Union[str, Path]):
        self.inner = inner
        self.record_dir = Path(record_dir)
        self.record_dir.mkdir(parents=True, exist_ok=True)
        (self.record_dir / BACKEND_FILE).write_text(json.dumps({'backend_id': inner.backend_id}, indent=2))

    @property
    def backend_id(self) -> str:
        return self.inner.backend_id

    def secrets(self) -> List[str]:
        return self.inner.secrets()

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        response = self.inner.complete(messages)
        key = prompt_hash(messages)
        transcript = {'backend_id': self.backend_id,
                      'messages': [m.to_dict() for m in messages],
                      'response': response}
        text = scrub(json.dumps(transcript, indent=2, ensure_ascii=False), self.secrets())
        (self.record_dir / f'{key}.json').write_text(text)
        logger.debug(f'Recorded response {key[:12]}')
        return response
