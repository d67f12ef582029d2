"""Acceptance suite. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL/SKIP line per criterion."""
import itertools
import os
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

import oracles
from conftest import random_kg
from raga import numerics as nx
from raga.aligner import blocking_pairs, daa_align, fine_grained, hungarian_align, local_align, raw_similarity
from raga.encoder import (
    Ablation,
    GraphInputs,
    HyperParams,
    encode,
    enhanced_entities,
    gcn_highway_forward,
    init_params,
    relation_aware_entities,
    relation_representations,
)
from raga.kg import build_incidence_index, build_normalized_adjacency
from raga.metrics import global_metrics, rank_metrics
from raga.numerics import Parameter, Tensor, finite_difference_check
from raga.synth import generate_synthetic_pair
from raga.trainer import final_embeddings, hinge_loss, sample_negatives, train

TOL, FLOOR = 1e-4, 1e-8


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def report(number, ok, detail):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


# -- 1: gradient suite -------------------------------------------------------

def _all_pass(fn, params):
    worst = 0.0
    for p in params:
        rep = finite_difference_check(fn, p, tolerance=TOL, abs_floor=FLOOR)
        worst = max(worst, rep.max_rel_error)
        if not rep.passed:
            return False, worst
    return True, worst


@criterion(1, "finite-difference gradients for every layer and encode+hinge (<60 s)")
def test_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    n, m = 10, 3
    kg1, kg2 = random_kg(rng, n, m, 16), random_kg(rng, n, m, 16)
    hyper = HyperParams(d_e=4, d_r=3, gcn_depth=2, margin=3.0, neg_k=3)
    params = init_params(rng.standard_normal((n, 4)), rng.standard_normal((n, 4)), hyper, rng)
    for b in params.gate_b:
        b.value[:] = rng.standard_normal(b.shape)
    adj, idx = build_normalized_adjacency(kg1), build_incidence_index(kg1)
    slope = hyper.leaky_slope
    r_in = Parameter(rng.standard_normal((m, 3)))
    x_rel_in = Parameter(rng.standard_normal((n, 10)))
    x1_in, x2_in = Parameter(rng.standard_normal((n, 5))), Parameter(rng.standard_normal((n, 5)))
    cache_in = sample_negatives(x1_in.value, x2_in.value, [[0, 1], [2, 2], [5, 7]], 3)

    def weighted(t, seed):
        w = Tensor(np.random.default_rng(seed).standard_normal(t.shape))
        return nx.sum_all(nx.mul(t, w))

    layers = {
        "gcn_highway": (lambda: weighted(gcn_highway_forward(params.emb1, adj, params.gate_w, params.gate_b), 1),
                        [params.emb1, *params.gate_w, *params.gate_b]),
        "relations": (lambda: weighted(relation_representations(params.emb1, idx, params, slope), 2),
                      [params.emb1, params.w_head, params.w_tail, params.a_rel]),
        "relation_aware": (lambda: weighted(relation_aware_entities(params.emb1, r_in, idx, params, slope), 3),
                           [params.emb1, r_in, params.a_out, params.a_in]),
        "neighbor_attention": (lambda: weighted(enhanced_entities(x_rel_in, idx, params, slope), 4),
                               [x_rel_in, params.a_gat]),
        "hinge": (lambda: hinge_loss(x1_in, x2_in, cache_in, 0.5), [x1_in, x2_in]),
    }

    g1, g2 = GraphInputs.from_kg(kg1), GraphInputs.from_kg(kg2)
    seeds = np.array([[0, 0], [3, 4], [6, 1]])
    x1 = encode(g1, params.emb1, params, hyper).output.value
    x2 = encode(g2, params.emb2, params, hyper).output.value
    cache = sample_negatives(x1, x2, seeds, hyper.neg_k)

    def full():
        o1 = encode(g1, params.emb1, params, hyper).output
        o2 = encode(g2, params.emb2, params, hyper).output
        return hinge_loss(o1, o2, cache, hyper.margin)

    assert full().value[0, 0] > 0  # some hinge terms active
    layers["encode+hinge"] = (full, list(params.named().values()))

    results = {name: _all_pass(fn, ps) for name, (fn, ps) in layers.items()}
    elapsed = time.perf_counter() - start
    ok = all(passed for passed, _ in results.values()) and elapsed < 60
    worst = max(w for _, w in results.values())
    report(1, ok, f"{len(results)} checks, worst rel error {worst:.2e}, {elapsed:.1f}s")
    assert ok, results


# -- 2: oracle equivalence ---------------------------------------------------

@criterion(2, "encoder stages match loop oracles within 1e-10 on 20 graphs (<60 s)")
def test_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for g in range(20):
        rng = np.random.default_rng(100 + g)
        n = int(rng.integers(1, 16))
        m = int(rng.integers(1, 5))
        kg = random_kg(rng, n, m, int(rng.integers(0, 3 * n + 1)), self_loops=bool(g % 2))
        hyper = HyperParams(d_e=5, d_r=4, gcn_depth=2)
        params = init_params(rng.standard_normal((n, 5)), rng.standard_normal((n, 5)), hyper, rng)
        for b in params.gate_b:
            b.value[:] = rng.standard_normal(b.shape)
        for aggregate_self in (False, True):
            acts = encode(GraphInputs.from_kg(kg), params.emb1, params, hyper, Ablation(aggregate_self=aggregate_self))
            idx = build_incidence_index(kg)
            bna = oracles.dense_gcn_highway(params.emb1.value, kg, [w.value for w in params.gate_w],
                                            [b.value for b in params.gate_b])
            r = oracles.relations(bna, idx, params.w_head.value, params.w_tail.value, params.a_rel.value,
                                  hyper.leaky_slope)
            x_rel = oracles.relation_aware(bna, r, idx, params.a_out.value, params.a_in.value, hyper.leaky_slope)
            x_out = oracles.enhanced(x_rel, idx, params.a_gat.value, hyper.leaky_slope, aggregate_self)
            for got, ref in ((acts.x_bna, bna), (acts.relations, r), (acts.x_rel, x_rel), (acts.x_out, x_out)):
                worst = max(worst, float(np.abs(got.value - ref).max(initial=0.0)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 60
    report(2, ok, f"max abs deviation {worst:.1e}, {elapsed:.1f}s")
    assert ok


# -- 3: matching correctness -------------------------------------------------

def _stable(values, pairs):
    owner = {j: i for i, j in pairs.items()}
    n1, n2 = values.shape
    for i in range(n1):
        for j in range(n2):
            if pairs.get(i) == j:
                continue
            if (i not in pairs or values[i, j] > values[i, pairs[i]]) and \
                    (j not in owner or values[i, j] > values[owner[j], j]):
                return False
    return True


def _brute_optimum(values):
    n1, n2 = values.shape
    if n1 > n2:
        return _brute_optimum(values.T)
    return max(sum(values[i, p[i]] for i in range(n1)) for p in itertools.permutations(range(n2), n1))


@criterion(3, "DAA stable+injective, Hungarian optimal (n<=8), Hungarian >= DAA on 200 matrices (<2 min)")
def test_matching_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    brute_checked = failures = 0
    for k in range(200):
        small = k % 3 == 0
        hi = 8 if small else 30
        n1 = int(rng.integers(1, hi + 1))
        n2 = n1 if k % 2 == 0 else int(rng.integers(1, hi + 1))
        s = rng.integers(-3, 4, (n1, n2)).astype(float) if k % 5 == 0 else rng.standard_normal((n1, n2))
        if k % 7 == 0:
            s = fine_grained(s).values
        d, h = daa_align(s), hungarian_align(s)
        ok = d.is_injective() and len(d.pairs) == min(n1, n2) and _stable(s, d.pairs) and not blocking_pairs(s, d)
        ok &= h.is_injective() and h.total(s) >= d.total(s) - 1e-9
        if max(n1, n2) <= 8:
            ok &= abs(h.total(s) - _brute_optimum(s)) <= 1e-9
            brute_checked += 1
        failures += not ok
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 120
    report(3, ok, f"200 instances, {brute_checked} brute-forced, {failures} failures, {elapsed:.1f}s")
    assert ok


# -- 4: fine-grained contract ------------------------------------------------

@criterion(4, "fine-grained similarity: softmax marginals, range (0, 2), 2x2 example")
def test_fine_grained_contract():
    rng = np.random.default_rng(3)
    ok = True
    for _ in range(50):
        s = rng.standard_normal(tuple(rng.integers(2, 25, size=2))) * 3
        g = fine_grained(s).values
        # row component by an explicit per-row loop; the remainder is the column part
        row = np.empty_like(s)
        for i in range(s.shape[0]):
            e = np.exp(s[i] - s[i].max())
            row[i] = e / e.sum()
        col = g - row
        ok &= np.allclose(row.sum(axis=1), 1.0, rtol=0, atol=1e-9)
        ok &= np.allclose(col.sum(axis=0), 1.0, rtol=0, atol=1e-9)
        ok &= bool(np.all((g > 0) & (g < 2)))
    g2 = fine_grained(np.array([[0.0, -10.0], [-10.0, 0.0]])).values
    ok &= np.allclose(np.diag(g2), 1.99991, atol=1e-4) and np.allclose(g2[[0, 1], [1, 0]], 9.08e-5, atol=1e-4)
    report(4, ok, f"diag {g2[0, 0]:.6f}, off-diag {g2[0, 1]:.3e}")
    assert ok


# -- 5 and 6: synthetic end to end -------------------------------------------

NOISY = dict(n_entities=300, n_relations=20, n_triples=1500, edge_noise=0.1, embed_noise=0.5,
             seed_ratio=0.3, rng_seed=0, dim=8)


def _run(task, e1, e2, ablation):
    hyper = HyperParams(d_e=e1.shape[1], epochs=100)
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        state = train(task, e1, e2, hyper, ablation, rng_seed=0)
    elapsed = time.perf_counter() - start
    x1, x2 = final_embeddings(task, state)
    return raw_similarity(x1, x2), elapsed


@pytest.fixture(scope="module")
def noisy_runs():
    task, e1, e2 = generate_synthetic_pair(**NOISY)
    full = _run(task, e1, e2, Ablation())
    no_rgat = _run(task, e1, e2, Ablation(no_rgat=True))
    return task, full, no_rgat


@pytest.mark.slow
@criterion(5, "synthetic recovery: RAGA-l >= w/o RGAT, DAA >= local, noiseless H@1 = 1.0")
def test_synthetic_directional(noisy_runs):
    task, (s, t_full), (s_ablate, t_ablate) = noisy_runs
    local = rank_metrics(s, task.test_pairs).hits_at[1]
    ablate = rank_metrics(s_ablate, task.test_pairs).hits_at[1]
    daa = global_metrics(daa_align(fine_grained(s)), task.test_pairs).one_to_one_h1
    ok = local >= ablate and daa >= local and max(t_full, t_ablate) < 300
    report(5, ok, f"w/o RGAT {ablate:.3f} <= RAGA-l {local:.3f} <= DAA {daa:.3f}; "
                  f"train {t_full:.0f}s/{t_ablate:.0f}s")
    assert ok


@pytest.mark.slow
@criterion(5, "synthetic recovery: RAGA-l >= w/o RGAT, DAA >= local, noiseless H@1 = 1.0")
def test_synthetic_noiseless():
    task, e1, e2 = generate_synthetic_pair(**{**NOISY, "edge_noise": 0.0, "embed_noise": 0.0})
    s, elapsed = _run(task, e1, e2, Ablation())
    local = rank_metrics(s, task.test_pairs).hits_at[1]
    daa = global_metrics(daa_align(fine_grained(s)), task.test_pairs).one_to_one_h1
    ok = local == 1.0 and daa == 1.0 and elapsed < 300
    report(5, ok, f"noiseless local H@1 {local}, DAA {daa}, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
@criterion(6, "local alignment has conflicts, DAA has none")
def test_conflict_elimination(noisy_runs):
    task, (s, _), _ = noisy_runs
    local = local_align(s)
    daa = daa_align(fine_grained(s))
    ok = local.conflict_count > 0 and daa.conflict_count == 0 and daa.is_injective()
    report(6, ok, f"local conflicts {local.conflict_count}, DAA conflicts {daa.conflict_count}")
    assert ok


# -- 7: optional full-scale run ----------------------------------------------

@pytest.mark.slow
@criterion(7, "optional full-scale ZH-EN: RAGA-l 79.8 +/- 2, RAGA 87.3 +/- 2")
@pytest.mark.skipif(not os.environ.get("RAGA_DBP15K_CONFIG"),
                    reason="set RAGA_DBP15K_CONFIG to a run config for the ZH-EN data")
def test_full_scale_zh_en():
    from raga.cli import align_and_score, load_data, run_training
    from raga.config import RunConfig

    cfg = RunConfig.load(os.environ["RAGA_DBP15K_CONFIG"])
    data = load_data(cfg)
    kg1 = data.task.kg1
    assert (kg1.entity_count, kg1.relation_count, kg1.triple_count) == (19388, 1700, 70414)
    with threadpool_limits(limits=cfg.threads):
        state = run_training(cfg, data.task, data.emb1, data.emb2)
        _, local_report, _ = align_and_score(cfg, data.task, state, "local")
        _, daa_report, _ = align_and_score(cfg, data.task, state, "daa")
    local, daa = 100 * local_report.hits_at[1], 100 * daa_report.one_to_one_h1
    ok = abs(local - 79.8) <= 2.0 and abs(daa - 87.3) <= 2.0
    report(7, ok, f"RAGA-l H@1 {local:.1f}, RAGA H@1 {daa:.1f}")
    assert ok
