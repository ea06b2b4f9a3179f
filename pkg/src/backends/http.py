__all__ = ['logger', 'HttpBackend']

# Cell
import logging
import os
import threading
import time
from typing import Any, Dict, List, Optional, Sequence

import requests

from ..core.exceptions import AuthError, BackendError, BackendTimeout, RateLimitedError
from .base import Backend, BackendConfig, ChatMessage, check_messages

logger = logging.getLogger(__name__)

# Cell
class HttpBackend(Backend):
    """Chat-completions client (wire format in docs/wire.md).

    Timeouts, 429 and 5xx responses are retried with exponential backoff
    bounded by `backoff_cap`; a `Retry-After` header overrides the delay.
    """

    def __init__(self, config: BackendConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))

    @property
    def backend_id(self) -> str:
        return f'http:{self.config.model_name}'

    def api_key(self) -> Optional[str]:
        if not self.config.api_key_env:
            return None
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthError(f'Environment variable {self.config.api_key_env} is not set')
        return key

    def secrets(self) -> List[str]:
        key = os.environ.get(self.config.api_key_env) if self.config.api_key_env else None
        return [key] if key else []

    def request_body(self, messages: Sequence[ChatMessage]) -> Dict[str, Any]:
        body = {'model': self.config.model_name,
                'messages': [m.to_dict() for m in messages],
                'temperature': self.config.temperature,
                'max_tokens': self.config.max_tokens}
        if self.config.seed is not None:
            body['seed'] = self.config.seed
        return body

    def _delay(self, attempt: int, retry_after: Optional[float] = None) -> float:
        delay = retry_after if retry_after is not None else self.config.backoff_base * 2 ** (attempt - 1)
        return min(self.config.backoff_cap, max(0.0, delay))

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        check_messages(messages)
        key = self.api_key()
        headers = {'Content-Type': 'application/json'}
        if key:
            headers['Authorization'] = f'Bearer {key}'
        body = self.request_body(messages)

        for attempt in range(1, self.config.max_attempts + 1):
            try:
                with self._slots:
                    response = self.session.post(self.config.endpoint_url, json=body, headers=headers,
                                                 timeout=self.config.timeout)
            except requests.Timeout:
                error, delay = BackendTimeout(f'Request timed out after {self.config.timeout}s'), self._delay(attempt)
            except requests.RequestException as e:
                raise BackendError(f'Request failed: {e}') from e
            else:
                status = response.status_code
                if status in (401, 403):
                    raise AuthError(f'Endpoint rejected credentials (HTTP {status})')
                if status == 429:
                    retry_after = _retry_after(response.headers.get('Retry-After'))
                    error = RateLimitedError('Rate limited (HTTP 429)', retry_after)
                    delay = self._delay(attempt, retry_after)
                elif status >= 500:
                    error, delay = BackendError(f'Server error (HTTP {status})'), self._delay(attempt)
                elif status >= 400:
                    raise BackendError(f'HTTP {status}: {response.text[:200]}')
                else:
                    return _content(response)

            if attempt == self.config.max_attempts:
                raise error
            logger.warning(f'{error}; retrying in {delay:.1f}s (attempt {attempt}/{self.config.max_attempts})')
            time.sleep(delay)

# Cell
def _retry_after(value: Optional[str]) -> Optional[float]:
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


def _content(response: requests.Response) -> str:
    try:
        content = response.json()['choices'][0]['message']['content']
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise BackendError(f'Malformed completion response: {e}') from e
    if not isinstance(content, str):
        raise BackendError('Completion content is not text')
    return content
