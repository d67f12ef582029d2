import numpy as np
import pytest

from raga.synth import generate_synthetic_pair


def _truth(task):
    pairs = np.concatenate([task.seed_pairs, task.test_pairs])
    perm = np.empty(len(pairs), dtype=np.int64)
    perm[pairs[:, 0]] = pairs[:, 1]
    return perm


def test_noiseless_clone_is_isomorphic():
    task, e1, e2 = generate_synthetic_pair(40, 3, 120, 0.0, 0.0, 0.3, rng_seed=5)
    perm = _truth(task)
    moved = {(int(perm[h]), r, int(perm[t])) for h, r, t in task.kg1.triples.tolist()}
    assert moved == task.kg2.triple_set()
    np.testing.assert_array_equal(e2[perm], e1)


def test_split_sizes():
    task, _, _ = generate_synthetic_pair(300, 20, 1500, 0.1, 0.5, 0.3, rng_seed=0)
    assert len(task.seed_pairs) == 90
    assert len(task.test_pairs) == 210
    assert sorted(_truth(task).tolist()) == list(range(300))


def test_edge_noise_swaps_exact_count():
    task, _, _ = generate_synthetic_pair(100, 5, 400, 0.25, 0.0, 0.5, rng_seed=2)
    perm = _truth(task)
    moved = {(int(perm[h]), r, int(perm[t])) for h, r, t in task.kg1.triples.tolist()}
    kept = moved & task.kg2.triple_set()
    assert task.kg2.triple_count == 400
    assert len(kept) == 400 - 100


def test_deterministic():
    a = generate_synthetic_pair(60, 4, 200, 0.1, 0.3, 0.4, rng_seed=11)
    b = generate_synthetic_pair(60, 4, 200, 0.1, 0.3, 0.4, rng_seed=11)
    for x, y in ((a[1], b[1]), (a[2], b[2]), (a[0].seed_pairs, b[0].seed_pairs),
                 (a[0].kg2.triples, b[0].kg2.triples)):
        assert x.tobytes() == y.tobytes()


@pytest.mark.parametrize("kwargs", [
    dict(n_triples=10_000),
    dict(edge_noise=1.0),
    dict(seed_ratio=0.0),
    dict(seed_ratio=1.0),
])
def test_infeasible_arguments(kwargs):
    base = dict(n_entities=10, n_relations=2, n_triples=20, edge_noise=0.0, embed_noise=0.0, seed_ratio=0.5)
    base.update(kwargs)
    with pytest.raises(ValueError):
        generate_synthetic_pair(**base)
