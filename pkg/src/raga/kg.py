"""Knowledge-graph data model, triple-file ingestion and graph indexes."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

Triple = Tuple[int, int, int]
Pair = Tuple[int, int]


class ParseError(ValueError):
    """Raised for malformed input files; carries the offending line number."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


@dataclass(frozen=True)
class KnowledgeGraph:
    """Entities and relations as dense indices plus the distinct triple list.

    ``triples`` is an ``(T, 3)`` int64 array of ``(head, relation, tail)``
    rows. Construction through :meth:`from_triples` collapses duplicate rows
    and keeps first-appearance order.
    """

    entity_count: int
    relation_count: int
    triples: np.ndarray
    entity_ids: Optional[Tuple[str, ...]] = None
    relation_ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        t.setflags(write=False)
        object.__setattr__(self, "triples", t)
        if self.entity_count < 0 or self.relation_count < 0:
            raise ValueError("entity and relation counts must be non-negative")
        if len(t):
            if t[:, [0, 2]].min() < 0 or t[:, [0, 2]].max() >= self.entity_count:
                raise ValueError("triple references an entity index out of range")
            if t[:, 1].min() < 0 or t[:, 1].max() >= self.relation_count:
                raise ValueError("triple references a relation index out of range")
            if len(np.unique(t, axis=0)) != len(t):
                raise ValueError("triples contain exact duplicates")
        if self.entity_ids is not None and len(self.entity_ids) != self.entity_count:
            raise ValueError("entity_ids length does not match entity_count")
        if self.relation_ids is not None and len(self.relation_ids) != self.relation_count:
            raise ValueError("relation_ids length does not match relation_count")

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[Sequence[int]],
        entity_count: Optional[int] = None,
        relation_count: Optional[int] = None,
        **kwargs,
    ) -> "KnowledgeGraph":
        seen = set()
        kept: List[Triple] = []
        for h, r, t in triples:
            key = (int(h), int(r), int(t))
            if key not in seen:
                seen.add(key)
                kept.append(key)
        arr = np.array(kept, dtype=np.int64).reshape(-1, 3)
        if entity_count is None:
            entity_count = int(arr[:, [0, 2]].max()) + 1 if len(arr) else 0
        if relation_count is None:
            relation_count = int(arr[:, 1].max()) + 1 if len(arr) else 0
        return cls(entity_count, relation_count, arr, **kwargs)

    @property
    def triple_count(self) -> int:
        return len(self.triples)

    def triple_set(self) -> set:
        return {tuple(int(v) for v in row) for row in self.triples}

    def entity_index(self) -> Dict[str, int]:
        if self.entity_ids is None:
            return {str(i): i for i in range(self.entity_count)}
        return {e: i for i, e in enumerate(self.entity_ids)}

    def entity_name(self, i: int) -> str:
        return str(i) if self.entity_ids is None else self.entity_ids[i]

    def permuted(self, perm: np.ndarray) -> "KnowledgeGraph":
        """Relabel entity ``i`` as ``perm[i]``; triple order is kept."""
        perm = np.asarray(perm, dtype=np.int64)
        t = self.triples.copy()
        t[:, 0] = perm[t[:, 0]]
        t[:, 2] = perm[t[:, 2]]
        ids = None
        if self.entity_ids is not None:
            ids_list = [""] * self.entity_count
            for old, new in enumerate(perm):
                ids_list[new] = self.entity_ids[old]
            ids = tuple(ids_list)
        return KnowledgeGraph(self.entity_count, self.relation_count, t, ids, self.relation_ids)


@dataclass(frozen=True)
class AlignmentTask:
    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    seed_pairs: np.ndarray
    test_pairs: np.ndarray

    def __post_init__(self):
        for name in ("seed_pairs", "test_pairs"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if len(arr):
                if arr[:, 0].min() < 0 or arr[:, 0].max() >= self.kg1.entity_count:
                    raise ValueError(f"{name}: KG1 entity index out of range")
                if arr[:, 1].min() < 0 or arr[:, 1].max() >= self.kg2.entity_count:
                    raise ValueError(f"{name}: KG2 entity index out of range")
        seeds = self.seed_pairs
        if len(np.unique(seeds[:, 0])) != len(seeds) or len(np.unique(seeds[:, 1])) != len(seeds):
            raise ValueError("seed pairs must be one-to-one")
        overlap = {tuple(p) for p in seeds.tolist()} & {tuple(p) for p in self.test_pairs.tolist()}
        if overlap:
            raise ValueError(f"{len(overlap)} pairs appear in both seeds and tests")


def load_graph(triple_file) -> KnowledgeGraph:
    """Read a ``head<TAB>relation<TAB>tail`` file.

    String ids become dense indices in order of first appearance (entities
    and relations numbered independently). Blank lines are skipped.
    """
    path = Path(triple_file)
    ent: Dict[str, int] = {}
    rel: Dict[str, int] = {}
    rows: List[Triple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated tokens, got {len(parts)}")
            h, r, t = parts
            hi = ent.setdefault(h, len(ent))
            ri = rel.setdefault(r, len(rel))
            ti = ent.setdefault(t, len(ent))
            rows.append((hi, ri, ti))
    return KnowledgeGraph.from_triples(
        rows, len(ent), len(rel), entity_ids=tuple(ent), relation_ids=tuple(rel)
    )


def build_normalized_adjacency(kg: KnowledgeGraph) -> sp.csr_matrix:
    """Symmetrically normalized ``D^-1/2 (A + I) D^-1/2`` with undirected 0/1 ``A``.

    A self-loop triple sets ``A[h, h] = 1`` before the identity is added.
    """
    n = kg.entity_count
    if n < 1:
        raise ValueError("adjacency needs at least one entity")
    h, t = kg.triples[:, 0], kg.triples[:, 2]
    rows = np.concatenate([h, t])
    cols = np.concatenate([t, h])
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a.data[:] = 1.0  # duplicates summed by coo->csr; collapse to 0/1
    a = a + sp.identity(n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    out = (inv_sqrt @ a @ inv_sqrt).tocsr()
    out.sort_indices()
    return out


@dataclass(frozen=True)
class RelationIncidenceIndex:
    """Set views over one graph's triples used by the attention layers.

    Every view is sorted by index. ``triples`` holds the triples sorted by
    ``(head, relation, tail)``; the attention layers iterate it directly so
    a pair linked by several relations contributes one term per relation.
    ``neighbor_edges`` lists ``(i, j)`` for ``j`` in ``neighbors[i]``.
    """

    entity_count: int
    relation_count: int
    triples: np.ndarray
    heads_of_relation: Tuple[Tuple[int, ...], ...]
    tails_given_head_relation: Dict[Pair, Tuple[int, ...]]
    tails_of_head: Tuple[Tuple[int, ...], ...]
    heads_of_tail: Tuple[Tuple[int, ...], ...]
    relations_between: Dict[Pair, Tuple[int, ...]]
    neighbors: Tuple[Tuple[int, ...], ...]
    neighbor_edges: np.ndarray = field(repr=False)

    def reconstruct_triples(self) -> set:
        out = set()
        for k, heads in enumerate(self.heads_of_relation):
            for h in heads:
                for t in self.tails_given_head_relation[(h, k)]:
                    out.add((h, k, t))
        return out


def build_incidence_index(kg: KnowledgeGraph) -> RelationIncidenceIndex:
    n, m = kg.entity_count, kg.relation_count
    order = np.lexsort((kg.triples[:, 2], kg.triples[:, 1], kg.triples[:, 0]))
    triples = kg.triples[order]
    triples.setflags(write=False)

    heads_of_rel: List[set] = [set() for _ in range(m)]
    tails_hr: Dict[Pair, set] = defaultdict(set)
    tails_of_head: List[set] = [set() for _ in range(n)]
    heads_of_tail: List[set] = [set() for _ in range(n)]
    rels_between: Dict[Pair, set] = defaultdict(set)
    nbrs: List[set] = [set() for _ in range(n)]
    for h, r, t in triples.tolist():
        heads_of_rel[r].add(h)
        tails_hr[(h, r)].add(t)
        tails_of_head[h].add(t)
        heads_of_tail[t].add(h)
        rels_between[(h, t)].add(r)
        if h != t:
            nbrs[h].add(t)
            nbrs[t].add(h)

    def freeze(sets):
        return tuple(tuple(sorted(s)) for s in sets)

    def freeze_map(d):
        return {key: tuple(sorted(d[key])) for key in sorted(d)}

    neighbors = freeze(nbrs)
    edges = np.array([(i, j) for i, js in enumerate(neighbors) for j in js], dtype=np.int64)
    edges = edges.reshape(-1, 2)
    edges.setflags(write=False)
    return RelationIncidenceIndex(
        entity_count=n,
        relation_count=m,
        triples=triples,
        heads_of_relation=freeze(heads_of_rel),
        tails_given_head_relation=freeze_map(tails_hr),
        tails_of_head=freeze(tails_of_head),
        heads_of_tail=freeze(heads_of_tail),
        relations_between=freeze_map(rels_between),
        neighbors=neighbors,
        neighbor_edges=edges,
    )
