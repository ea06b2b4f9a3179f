__all__ = ['HardeningError', 'ManifestSyntaxError', 'MissingFieldError', 'MalformedRuleError',
           'FatalFormatError', 'ProvenanceSyntaxError', 'DanglingEdgeError', 'RecursionLimitError',
           'TemplateError', 'InputMissingError', 'ExtractionError', 'BackendError', 'BackendTimeout',
           'RateLimitedError', 'AuthError', 'ReplayMissError', 'TypeMismatchError', 'ConfigError']

# Cell
from typing import Optional


class HardeningError(Exception):
    """Base class of every error raised by the pipeline."""


# Cell
class ManifestSyntaxError(HardeningError):
    """Manifest text is not valid YAML/JSON. Line and column are 1-based."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f' (line {line}, column {column})' if line is not None else ''
        super().__init__(f'{message}{where}')


class MissingFieldError(HardeningError):
    pass


class MalformedRuleError(HardeningError):
    pass


# Cell
class FatalFormatError(HardeningError):
    """Too many lines of a log stream could not be parsed."""

    def __init__(self, source: str, failed: int, total: int, threshold: float):
        self.failed = failed
        self.total = total
        super().__init__(f'{source}: {failed}/{total} lines failed to parse '
                         f'(threshold {threshold:.0%})')


class ProvenanceSyntaxError(HardeningError):
    pass


class DanglingEdgeError(HardeningError):

    def __init__(self, from_id: str, to_id: str, missing: str):
        self.from_id = from_id
        self.to_id = to_id
        super().__init__(f'Edge {from_id} -> {to_id} references unknown vertex {missing}')


class RecursionLimitError(HardeningError):
    pass


# Cell
class TemplateError(HardeningError):
    pass


class InputMissingError(HardeningError):
    pass


class ExtractionError(HardeningError):

    def __init__(self, step: str, attempts: int):
        self.step = step
        self.attempts = attempts
        super().__init__(f'No manifest could be extracted from step {step} after {attempts} attempts')


# Cell
class BackendError(HardeningError):
    pass


class BackendTimeout(BackendError):
    pass


class RateLimitedError(BackendError):

    def __init__(self, message: str, retry_after: Optional[float] = None):
        self.retry_after = retry_after
        super().__init__(message)


class AuthError(BackendError):
    pass


class ReplayMissError(BackendError):
    pass


# Cell
class TypeMismatchError(HardeningError):
    pass


class ConfigError(HardeningError):
    pass
