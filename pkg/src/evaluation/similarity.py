__all__ = ['tokenize', 'cosine', 'overlap', 'dice', 'similarities']

# Cell
import re
from collections import Counter
from typing import Dict, Iterable, List

import numpy as np

NON_ALNUM = re.compile(r'[^0-9a-z]+')

# Cell
def tokenize(text: str) -> List[str]:
    """Lowercased alphanumeric runs."""
    return [t for t in NON_ALNUM.split(text.lower()) if t]


def cosine(a: Iterable[str], b: Iterable[str]) -> float:
    """Cosine similarity of token count vectors."""
    ca, cb = Counter(a), Counter(b)
    if not ca and not cb:
        return 1.0
    if not ca or not cb:
        return 0.0
    vocab = sorted(set(ca) | set(cb))
    va = np.array([ca[t] for t in vocab], dtype=float)
    vb = np.array([cb[t] for t in vocab], dtype=float)
    value = np.dot(va, vb) / np.sqrt(np.dot(va, va) * np.dot(vb, vb))
    return float(np.clip(value, 0.0, 1.0))


def overlap(a: Iterable[str], b: Iterable[str]) -> float:
    """Shared tokens over the size of the smaller set."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / min(len(sa), len(sb))


def dice(a: Iterable[str], b: Iterable[str]) -> float:
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return 2 * len(sa & sb) / (len(sa) + len(sb))


def similarities(text_a: str, text_b: str) -> Dict[str, float]:
    ta, tb = tokenize(text_a), tokenize(text_b)
    return {'cosine': cosine(ta, tb), 'overlap': overlap(ta, tb), 'dice': dice(ta, tb)}
