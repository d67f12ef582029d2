"""Hits@k, MRR and one-to-one accuracy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from .aligner import Alignment, SimilarityMatrix, _values
from .numerics import ContractError


@dataclass
class MetricsReport:
    hits_at: Dict[int, float] = field(default_factory=dict)
    mrr: Optional[float] = None
    one_to_one_h1: Optional[float] = None
    conflict_count: Optional[int] = None
    direction: str = "source->target"
    count: int = 0

    def merged(self, other: "MetricsReport") -> "MetricsReport":
        out = MetricsReport(dict(self.hits_at), self.mrr, self.one_to_one_h1,
                            self.conflict_count, self.direction, self.count)
        out.hits_at.update(other.hits_at)
        for name in ("mrr", "one_to_one_h1", "conflict_count"):
            if getattr(other, name) is not None:
                setattr(out, name, getattr(other, name))
        out.count = max(self.count, other.count)
        return out

    def as_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {"direction": self.direction, "count": self.count}
        for k in sorted(self.hits_at):
            out[f"hits@{k}"] = self.hits_at[k]
        if self.mrr is not None:
            out["mrr"] = self.mrr
        if self.one_to_one_h1 is not None:
            out["one_to_one_h1"] = self.one_to_one_h1
        if self.conflict_count is not None:
            out["conflict_count"] = self.conflict_count
        return out

    def to_keyvalue(self) -> str:
        lines = []
        for key, value in self.as_dict().items():
            if isinstance(value, float):
                value = f"{value:.6f}"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [(k, f"{v:.4f}" if isinstance(v, float) else str(v)) for k, v in self.as_dict().items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _check_pairs(test_pairs, shape) -> np.ndarray:
    pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs[:, 0].max() >= shape[0] or pairs[:, 1].max() >= shape[1]):
        raise ValueError(f"test pair out of range for similarity matrix of shape {shape}")
    return pairs


def ranks(s, test_pairs) -> np.ndarray:
    """1-based rank of each true target in its source row.

    Ties count against the true target only when the rival has a lower
    column index.
    """
    values = _values(s)
    pairs = _check_pairs(test_pairs, values.shape)
    if len(pairs) == 0:
        return np.zeros(0, dtype=np.int64)
    rows = values[pairs[:, 0]]
    target = rows[np.arange(len(pairs)), pairs[:, 1]][:, None]
    cols = np.arange(values.shape[1])[None, :]
    ahead = (rows > target) | ((rows == target) & (cols < pairs[:, 1][:, None]))
    return 1 + ahead.sum(axis=1)


def rank_metrics(s, test_pairs, ks: Iterable[int] = (1, 10)) -> MetricsReport:
    r = ranks(s, test_pairs)
    if len(r) == 0:
        return MetricsReport({k: 0.0 for k in ks}, 0.0)
    return MetricsReport(
        hits_at={int(k): float(np.mean(r <= k)) for k in ks},
        mrr=float(np.mean(1.0 / r)),
        count=len(r),
    )


def global_metrics(alignment: Alignment, test_pairs) -> MetricsReport:
    """Fraction of test pairs reproduced exactly; unmatched sources are misses."""
    if not alignment.is_injective():
        raise ContractError(f"global_metrics needs a one-to-one alignment ({alignment.method} is not)")
    pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return MetricsReport(one_to_one_h1=0.0, conflict_count=0)
    hits = sum(alignment.pairs.get(int(a)) == int(b) for a, b in pairs)
    return MetricsReport(one_to_one_h1=hits / len(pairs), conflict_count=0, count=len(pairs))


def local_h1(alignment: Alignment, test_pairs) -> float:
    pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return 0.0
    return sum(alignment.pairs.get(int(a)) == int(b) for a, b in pairs) / len(pairs)


def conflicts_among(alignment: Alignment, test_sources: Sequence[int]) -> int:
    """Conflicts among the alignment restricted to ``test_sources``."""
    keep = set(int(i) for i in test_sources)
    restricted = Alignment({i: j for i, j in alignment.pairs.items() if i in keep}, alignment.method)
    return restricted.conflict_count
