__all__ = ['logger', 'MANIFEST_KINDS', 'ManifestDoc', 'parse_manifest', 'dump_manifests', 'load_manifest_dir']

# Cell
import copy
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import yaml

from .exceptions import ManifestSyntaxError, MissingFieldError
from .records import canonical_json, canonicalize

logger = logging.getLogger(__name__)

MANIFEST_KINDS = ('Role', 'NetworkPolicy', 'Deployment', 'ServiceAccount', 'RoleBinding')

# Cell
@dataclass(frozen=True)
class ManifestDoc:
    """Canonical in-memory Kubernetes resource.

    `body` holds every top-level field other than apiVersion, kind and
    metadata, with keys sorted at every level. Instances are never mutated;
    accessors return copies.
    """
    api_version: str
    kind: str
    metadata: Dict[str, Any]
    body: Dict[str, Any]

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'ManifestDoc':
        kind = doc.get('kind')
        if not isinstance(kind, str) or not kind:
            raise MissingFieldError('Manifest has no kind')
        metadata = doc.get('metadata') or {}
        if not isinstance(metadata, dict) or not metadata.get('name'):
            raise MissingFieldError(f'{kind} manifest has no metadata.name')
        body = {k: v for k, v in doc.items() if k not in ('apiVersion', 'kind', 'metadata')}
        return cls(api_version=str(doc.get('apiVersion', '')), kind=kind,
                   metadata=canonicalize(copy.deepcopy(metadata)),
                   body=canonicalize(copy.deepcopy(body)))

    @property
    def name(self) -> str:
        return str(self.metadata['name'])

    @property
    def namespace(self) -> str:
        return str(self.metadata.get('namespace') or 'default')

    @property
    def labels(self) -> Dict[str, str]:
        return dict(self.metadata.get('labels') or {})

    @property
    def is_other(self) -> bool:
        return self.kind not in MANIFEST_KINDS

    def get(self, path: str, default: Any = None) -> Any:
        """Dotted lookup inside the body, e.g. `spec.template.spec`."""
        node = self.body
        for part in path.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return copy.deepcopy(node)

    def to_dict(self) -> Dict[str, Any]:
        doc = {'apiVersion': self.api_version, 'kind': self.kind,
               'metadata': copy.deepcopy(self.metadata)}
        doc.update(copy.deepcopy(self.body))
        return canonicalize(doc)

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_yaml(self) -> str:
        return dump_manifests([self])

    def replace_body(self, body: Dict[str, Any], metadata: Optional[Dict[str, Any]] = None) -> 'ManifestDoc':
        doc = {'apiVersion': self.api_version, 'kind': self.kind,
               'metadata': metadata if metadata is not None else self.metadata}
        doc.update(body)
        return ManifestDoc.from_dict(doc)

# Cell
def _yaml_error(e: yaml.YAMLError) -> ManifestSyntaxError:
    mark = getattr(e, 'problem_mark', None)
    problem = getattr(e, 'problem', None) or str(e)
    if mark is None:
        return ManifestSyntaxError(f'Invalid YAML: {problem}')
    return ManifestSyntaxError(f'Invalid YAML: {problem}', mark.line + 1, mark.column + 1)


def parse_manifest(text: Union[str, bytes]) -> List[ManifestDoc]:
    """Parses YAML (multi-document) or JSON manifest text.

    Parameters
    ----------
    text: str or bytes
        Manifest text. `kind: List` documents are expanded into their items.

    Returns
    -------
    docs: list of ManifestDoc
        One document per YAML/JSON document, in order.
    """
    if isinstance(text, bytes):
        text = text.decode('utf-8', errors='replace')
    if not text.strip():
        return []

    raw_docs = None
    if text.lstrip()[0] in '{[':
        try:
            data = json.loads(text)
            raw_docs = data if isinstance(data, list) else [data]
        except json.JSONDecodeError:
            # flow-style YAML also starts with a brace
            raw_docs = None
    if raw_docs is None:
        try:
            raw_docs = list(yaml.safe_load_all(text))
        except yaml.YAMLError as e:
            raise _yaml_error(e) from e

    docs = []
    for raw in raw_docs:
        if raw is None:
            continue
        if not isinstance(raw, dict):
            raise MissingFieldError(f'Document is a {type(raw).__name__}, not a mapping')
        if raw.get('kind') == 'List' and isinstance(raw.get('items'), list):
            docs.extend(ManifestDoc.from_dict(item) for item in raw['items'] if isinstance(item, dict))
            continue
        docs.append(ManifestDoc.from_dict(raw))
    return docs


def dump_manifests(docs: Iterable[ManifestDoc]) -> str:
    """Multi-document YAML with sorted keys."""
    return yaml.safe_dump_all([doc.to_dict() for doc in docs], sort_keys=True,
                              default_flow_style=False, allow_unicode=True)

# Cell
def load_manifest_dir(directory: Union[str, Path]) -> List[ManifestDoc]:
    """Parses every *.yaml, *.yml and *.json file of a directory, sorted by name."""
    directory = Path(directory)
    docs = []
    for path in sorted(directory.iterdir()):
        if path.suffix not in ('.yaml', '.yml', '.json'):
            continue
        parsed = parse_manifest(path.read_text())
        logger.info(f'Loaded {len(parsed)} manifests from {path.name}')
        docs.extend(parsed)
    return docs
