"""Readers and writers for pair, embedding, triple and alignment files."""
from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np

from .aligner import Alignment
from .kg import KnowledgeGraph, ParseError


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield lineno, line


def load_pairs(path, kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> np.ndarray:
    """``e1<TAB>e2`` lines mapped to ``(n, 2)`` entity indices."""
    idx1, idx2 = kg1.entity_index(), kg2.entity_index()
    out = []
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(path, lineno, f"expected 2 tab-separated tokens, got {len(parts)}")
        a, b = parts
        if a not in idx1:
            raise ParseError(path, lineno, f"unknown KG1 entity {a!r}")
        if b not in idx2:
            raise ParseError(path, lineno, f"unknown KG2 entity {b!r}")
        out.append((idx1[a], idx2[b]))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def save_pairs(path, pairs, kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in np.asarray(pairs).reshape(-1, 2):
            fh.write(f"{kg1.entity_name(int(a))}\t{kg2.entity_name(int(b))}\n")


def save_graph(path, kg: KnowledgeGraph) -> None:
    rel = kg.relation_ids or tuple(str(k) for k in range(kg.relation_count))
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.triples.tolist():
            fh.write(f"{kg.entity_name(h)}\t{rel[r]}\t{kg.entity_name(t)}\n")


def load_embeddings(path, kg: KnowledgeGraph) -> np.ndarray:
    """Read ``<count> <dim>`` then ``id f1 .. f_dim`` rows, ordered as ``kg`` entities.

    Every KG entity needs a row; ids unknown to the graph are ignored.
    """
    path = Path(path)
    index = kg.entity_index()
    rows = _lines(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise ParseError(path, 1, "empty embedding file") from None
    try:
        count, dim = (int(v) for v in header.split())
    except ValueError:
        raise ParseError(path, lineno, "header must be '<count> <dim>'") from None
    out = np.full((kg.entity_count, dim), np.nan)
    seen = 0
    for lineno, line in rows:
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise ParseError(path, lineno, f"expected id and {dim} values, got {len(parts) - 1} values")
        try:
            vec = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        seen += 1
        i = index.get(parts[0])
        if i is not None:
            out[i] = vec
    if seen != count:
        raise ParseError(path, lineno, f"header announces {count} rows, found {seen}")
    missing = np.flatnonzero(np.isnan(out).any(axis=1))
    if len(missing):
        raise ValueError(f"{path}: no embedding for {len(missing)} entities, e.g. {kg.entity_name(int(missing[0]))!r}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{path}: non-finite embedding values")
    return out


def save_embeddings(path, kg: KnowledgeGraph, emb) -> None:
    emb = np.asarray(emb, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{emb.shape[0]} {emb.shape[1]}\n")
        for i, row in enumerate(emb):
            fh.write(kg.entity_name(i) + " " + " ".join(format(v, ".17g") for v in row) + "\n")


def save_alignment(path, alignment: Alignment, kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> None:
    """``e1_id<TAB>e2_id<TAB>score<TAB>method`` per aligned source."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in alignment.pairs.items():
            score = alignment.scores.get(i, float("nan"))
            fh.write(f"{kg1.entity_name(i)}\t{kg2.entity_name(j)}\t{score:.10g}\t{alignment.method}\n")


def load_alignment(path) -> List[Tuple[str, str, float, str]]:
    out = []
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(path, lineno, f"expected 4 tab-separated fields, got {len(parts)}")
        try:
            score = float(parts[2])
        except ValueError:
            raise ParseError(path, lineno, f"bad score {parts[2]!r}") from None
        out.append((parts[0], parts[1], score, parts[3]))
    return out


def load_raw_pairs(path) -> List[Tuple[str, str]]:
    out = []
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(path, lineno, f"expected 2 tab-separated tokens, got {len(parts)}")
        out.append((parts[0], parts[1]))
    return out
