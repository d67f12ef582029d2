"""Similarity matrices and matchers turning two embedding tables into alignments."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import softmax

from .numerics import DimensionError


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    kind: str = "raw"

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Alignment:
    """Source -> target mapping; ``unmatched`` lists leftover sources and targets."""

    pairs: Dict[int, int]
    method: str
    scores: Dict[int, float] = field(default_factory=dict)
    unmatched_source: List[int] = field(default_factory=list)
    unmatched_target: List[int] = field(default_factory=list)

    def is_injective(self) -> bool:
        return len(set(self.pairs.values())) == len(self.pairs)

    def total(self, s) -> float:
        values = _values(s)
        return float(sum(values[i, j] for i, j in self.pairs.items()))

    def conflicts(self) -> Dict[int, List[int]]:
        """Targets claimed by two or more sources."""
        claimed: Dict[int, List[int]] = {}
        for i, j in sorted(self.pairs.items()):
            claimed.setdefault(j, []).append(i)
        return {j: srcs for j, srcs in claimed.items() if len(srcs) > 1}

    @property
    def conflict_count(self) -> int:
        return len(self.conflicts())


def _values(s) -> np.ndarray:
    return s.values if isinstance(s, SimilarityMatrix) else np.asarray(s, dtype=np.float64)


def _finish(pairs: Dict[int, int], values: np.ndarray, method: str) -> Alignment:
    n1, n2 = values.shape
    taken = set(pairs.values())
    return Alignment(
        pairs=dict(sorted(pairs.items())),
        method=method,
        scores={i: float(values[i, j]) for i, j in pairs.items()},
        unmatched_source=[i for i in range(n1) if i not in pairs],
        unmatched_target=[j for j in range(n2) if j not in taken],
    )


def raw_similarity(x1, x2) -> SimilarityMatrix:
    """Negated pairwise Manhattan distance; larger means more similar."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.ndim != 2 or x2.ndim != 2 or x1.shape[1] != x2.shape[1]:
        raise DimensionError(f"raw_similarity: shapes {x1.shape} and {x2.shape}")
    return SimilarityMatrix(-cdist(x1, x2, "cityblock"), "raw")


def fine_grained(s) -> SimilarityMatrix:
    """Row softmax plus column softmax of ``S``.

    Not scale invariant: multiplying ``S`` by a constant changes the result.
    """
    values = _values(s)
    if values.size == 0:
        return SimilarityMatrix(values.copy(), "fine_grained")
    return SimilarityMatrix(softmax(values, axis=1) + softmax(values, axis=0), "fine_grained")


def local_align(s) -> Alignment:
    """Independent per-row argmax (lowest column on ties); may be many-to-one."""
    values = _values(s)
    if values.shape[1] == 0:
        return _finish({}, values, "local")
    best = np.argmax(values, axis=1)
    return _finish({i: int(j) for i, j in enumerate(best)}, values, "local")


def preference_lists(values: np.ndarray) -> np.ndarray:
    """Columns per row by descending score, lower index first on ties."""
    return np.argsort(-values, axis=1, kind="stable")


def daa_align(s) -> Alignment:
    """Deferred acceptance with rows proposing and columns holding.

    A column swaps its held proposer only for a strictly higher score.
    The result is a stable one-to-one matching of size ``min(n1, n2)``.
    """
    values = _values(s)
    n1, n2 = values.shape
    if n1 == 0 or n2 == 0:
        return _finish({}, values, "daa")
    prefs = preference_lists(values)
    next_choice = [0] * n1
    held = [-1] * n2
    free = list(range(n1 - 1, -1, -1))
    while free:
        i = free.pop()
        if next_choice[i] >= n2:
            continue  # exhausted: stays unmatched
        j = int(prefs[i, next_choice[i]])
        next_choice[i] += 1
        cur = held[j]
        if cur == -1:
            held[j] = i
        elif values[i, j] > values[cur, j]:
            held[j] = i
            free.append(cur)
        else:
            free.append(i)
    pairs = {i: j for j, i in enumerate(held) if i != -1}
    return _finish(pairs, values, "daa")


def hungarian_align(s) -> Alignment:
    """Maximum-total-similarity matching covering the smaller side."""
    values = _values(s)
    if values.size == 0:
        return _finish({}, values, "hungarian")
    rows, cols = linear_sum_assignment(values, maximize=True)
    return _finish({int(i): int(j) for i, j in zip(rows, cols)}, values, "hungarian")


def blocking_pairs(s, alignment: Alignment) -> List[Tuple[int, int]]:
    """Pairs ``(i, j)`` that both strictly prefer each other to their partners.

    An unmatched side prefers any partner.
    """
    values = _values(s)
    n1, n2 = values.shape
    owner = {j: i for i, j in alignment.pairs.items()}
    row_cur = np.full(n1, -np.inf)
    col_cur = np.full(n2, -np.inf)
    for i, j in alignment.pairs.items():
        row_cur[i] = values[i, j]
        col_cur[j] = values[i, j]
    blocked = (values > row_cur[:, None]) & (values > col_cur[None, :])
    out = []
    for i, j in zip(*np.nonzero(blocked)):
        if alignment.pairs.get(int(i)) != int(j) and owner.get(int(j)) != int(i):
            out.append((int(i), int(j)))
    return out
