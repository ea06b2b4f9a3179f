__all__ = ['divide_no_nan', 'precision', 'recall', 'f1_score', 'DiffResult', 'diff', 'score_manifest',
           'injected_recall', 'EvalReport']

# Cell
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Set

import numpy as np

from ..core.elements import decompose, element_type
from ..core.manifests import ManifestDoc

# Cell
def divide_no_nan(a, b):
    """
    Auxiliary function to handle divide by 0
    """
    with np.errstate(divide='ignore', invalid='ignore'):
        div = np.asarray(a, dtype=float) / np.asarray(b, dtype=float)
    div = np.where(np.isfinite(div), div, 0.0)
    return float(div) if div.ndim == 0 else div


def precision(tp, fp):
    """tp / (tp + fp), 0 when nothing was predicted."""
    return divide_no_nan(tp, np.add(tp, fp))


def recall(tp, fn):
    return divide_no_nan(tp, np.add(tp, fn))


def f1_score(p, r):
    """Harmonic mean of precision and recall, 0 when both are 0."""
    return divide_no_nan(2 * np.multiply(p, r), np.add(p, r))

# Cell
@dataclass
class DiffResult:
    """Element-level confusion counts of a candidate against a baseline."""
    tp: int
    fp: int
    fn: int
    tn: int = 0
    fp_elements: List[Any] = field(default_factory=list)
    fn_elements: List[Any] = field(default_factory=list)

    def __post_init__(self):
        assert self.fp == len(self.fp_elements), 'fp count differs from fp elements'
        assert self.fn == len(self.fn_elements), 'fn count differs from fn elements'

    @property
    def precision(self) -> float:
        return precision(self.tp, self.fp)

    @property
    def recall(self) -> float:
        return recall(self.tp, self.fn)

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    @property
    def empty_candidate(self) -> bool:
        return self.tp + self.fp == 0

    def to_dict(self) -> Dict[str, Any]:
        return {'tp': self.tp, 'fp': self.fp, 'fn': self.fn, 'tn': self.tn,
                'precision': self.precision, 'recall': self.recall, 'f1': self.f1,
                'emptyCandidate': self.empty_candidate,
                'fpElements': [list(e) for e in self.fp_elements],
                'fnElements': [list(e) for e in self.fn_elements]}


def diff(candidate: Iterable[Any], baseline: Iterable[Any], original: Optional[Iterable[Any]] = None) -> DiffResult:
    """Compares element sets of the same type.

    Parameters
    ----------
    candidate: set
        Elements of the hardened manifest.
    baseline: set
        Log-evidenced ground truth.
    original: set, optional
        Elements of the manifest before refinement; only refinement tasks
        count true negatives (kept elements that needed no hardening).

    Returns
    -------
    result: DiffResult
    """
    candidate, baseline = set(candidate), set(baseline)
    original = set(original) if original is not None else None
    element_type(candidate | baseline | (original or set()))
    fp, fn = candidate - baseline, baseline - candidate
    tn = len(original & baseline & candidate) if original is not None else 0
    return DiffResult(tp=len(candidate & baseline), fp=len(fp), fn=len(fn), tn=tn,
                      fp_elements=sorted(fp, key=repr), fn_elements=sorted(fn, key=repr))


def score_manifest(candidate: ManifestDoc, baseline: Set[Any], original: Optional[ManifestDoc] = None) -> DiffResult:
    return diff(decompose(candidate), baseline, decompose(original) if original is not None else None)


def injected_recall(candidate: Iterable[Any], injected: Iterable[Any]) -> float:
    """Fraction of injected elements absent from the candidate."""
    injected = set(injected)
    if not injected:
        return 1.0
    return 1.0 - len(injected & set(candidate)) / len(injected)

# Cell
@dataclass
class EvalReport:
    """Per-resource diffs with scores pooled over all resources."""
    results: Dict[str, DiffResult]
    injected_recall: Optional[float] = None

    def _total(self, name: str) -> int:
        return sum(getattr(r, name) for r in self.results.values())

    @property
    def precision(self) -> float:
        return precision(self._total('tp'), self._total('fp'))

    @property
    def recall(self) -> float:
        return recall(self._total('tp'), self._total('fn'))

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def to_dict(self) -> Dict[str, Any]:
        d = {'precision': self.precision, 'recall': self.recall, 'f1': self.f1,
             'resources': {name: r.to_dict() for name, r in sorted(self.results.items())}}
        if self.injected_recall is not None:
            d['injectedRecall'] = self.injected_recall
        return d
