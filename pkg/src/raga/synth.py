"""Synthetic aligned KG pairs with known ground truth."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from .kg import AlignmentTask, KnowledgeGraph


def _random_triples(rng, n_entities, n_relations, count, exclude=frozenset()):
    """Draw ``count`` distinct non-self-loop triples absent from ``exclude``."""
    out = []
    seen = set(exclude)
    while len(out) < count:
        h, t = rng.integers(0, n_entities, size=2)
        if h == t:
            continue
        key = (int(h), int(rng.integers(0, n_relations)), int(t))
        if key in seen:
            continue
        seen.add(key)
        out.append(key)
    return out


def generate_synthetic_pair(
    n_entities: int,
    n_relations: int,
    n_triples: int,
    edge_noise: float = 0.0,
    embed_noise: float = 0.0,
    seed_ratio: float = 0.3,
    rng_seed: int = 0,
    dim: int = 16,
) -> Tuple[AlignmentTask, np.ndarray, np.ndarray]:
    """Build a KG pair where KG2 is a relabelled, perturbed copy of KG1.

    KG2 entity ``perm[i]`` corresponds to KG1 entity ``i``.
    ``floor(edge_noise * n_triples)`` KG2 triples are deleted and as many
    fresh random triples inserted. KG1 embeddings are standard normal rows
    of width ``dim``; KG2 rows are the permuted KG1 rows plus
    ``embed_noise`` times fresh standard normal noise.

    Returns ``(task, emb1, emb2)``. Output depends only on the arguments.
    """
    if n_entities < 2 or n_relations < 1 or dim < 1:
        raise ValueError("need n_entities >= 2, n_relations >= 1, dim >= 1")
    capacity = n_entities * (n_entities - 1) * n_relations
    if n_triples < 0 or n_triples > n_entities**2 or n_triples > capacity:
        raise ValueError(f"n_triples={n_triples} infeasible for {n_entities} entities")
    if not 0.0 <= edge_noise < 1.0:
        raise ValueError("edge_noise must lie in [0, 1)")
    if not 0.0 < seed_ratio < 1.0:
        raise ValueError("seed_ratio must lie in (0, 1)")
    if embed_noise < 0:
        raise ValueError("embed_noise must be non-negative")

    rng = np.random.default_rng(rng_seed)
    base = _random_triples(rng, n_entities, n_relations, n_triples)
    kg1 = KnowledgeGraph.from_triples(
        base,
        n_entities,
        n_relations,
        entity_ids=tuple(f"a{i}" for i in range(n_entities)),
        relation_ids=tuple(f"r{k}" for k in range(n_relations)),
    )

    perm = rng.permutation(n_entities)
    moved = [(int(perm[h]), r, int(perm[t])) for h, r, t in base]
    n_swap = int(np.floor(edge_noise * n_triples))
    if n_swap:
        drop = set(rng.choice(len(moved), size=n_swap, replace=False).tolist())
        kept = [tr for idx, tr in enumerate(moved) if idx not in drop]
        moved = kept + _random_triples(rng, n_entities, n_relations, n_swap, exclude=set(moved))
    kg2 = KnowledgeGraph.from_triples(
        moved,
        n_entities,
        n_relations,
        entity_ids=tuple(f"b{i}" for i in range(n_entities)),
        relation_ids=tuple(f"s{k}" for k in range(n_relations)),
    )

    truth = np.stack([np.arange(n_entities), perm], axis=1)
    truth = truth[rng.permutation(n_entities)]
    n_seed = int(round(seed_ratio * n_entities))
    task = AlignmentTask(kg1, kg2, truth[:n_seed], truth[n_seed:])

    emb1 = rng.standard_normal((n_entities, dim))
    emb2 = np.empty_like(emb1)
    emb2[perm] = emb1 + embed_noise * rng.standard_normal((n_entities, dim))
    return task, emb1, emb2
