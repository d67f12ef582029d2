import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from raga.aligner import Alignment, daa_align, local_align
from raga.metrics import (
    MetricsReport,
    conflicts_among,
    global_metrics,
    local_h1,
    rank_metrics,
    ranks,
)
from raga.numerics import ContractError


def naive_ranks(s, pairs):
    out = []
    for a, b in pairs:
        order = sorted(range(s.shape[1]), key=lambda j: (-s[a, j], j))
        out.append(order.index(b) + 1)
    return out


square = st.integers(2, 12).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.integers(-4, 4).map(float)))


def test_perfect_diagonal():
    s = -np.abs(np.subtract.outer(np.arange(6.0), np.arange(6.0)))
    rep = rank_metrics(s, np.stack([np.arange(6)] * 2, axis=1), ks=(1, 5))
    assert rep.hits_at == {1: 1.0, 5: 1.0} and rep.mrr == 1.0 and rep.count == 6


def test_rank_two_of_ten():
    s = np.zeros((1, 10))
    s[0, 3] = 1.0
    s[0, 7] = 0.5
    rep = rank_metrics(s, [[0, 7]])
    assert ranks(s, [[0, 7]]).tolist() == [2]
    assert rep.hits_at == {1: 0.0, 10: 1.0} and rep.mrr == 0.5


def test_ties_are_pessimistic_by_index():
    s = np.array([[1.0, 1.0, 1.0]])
    assert ranks(s, [[0, 0], [0, 2]]).tolist() == [1, 3]


@given(square, st.data())
def test_matches_naive_sort(s, data):
    n = s.shape[0]
    pairs = np.array([[i, data.draw(st.integers(0, n - 1))] for i in range(n)])
    assert ranks(s, pairs).tolist() == naive_ranks(s, pairs)
    rep = rank_metrics(s, pairs)
    assert 0 <= rep.hits_at[1] <= rep.mrr <= 1
    assert rep.hits_at[1] <= rep.hits_at[10]
    assert rank_metrics(s, pairs, ks=(n,)).hits_at[n] == 1.0


@given(square)
def test_strictly_monotone_transform_invariant(s):
    pairs = np.stack([np.arange(len(s))] * 2, axis=1)
    assert ranks(s, pairs).tolist() == ranks(np.exp(0.3 * s) - 4, pairs).tolist()


def test_out_of_range():
    with pytest.raises(ValueError):
        ranks(np.zeros((2, 2)), [[0, 2]])


def test_empty_pairs():
    rep = rank_metrics(np.zeros((2, 2)), np.zeros((0, 2)))
    assert rep.mrr == 0.0


def test_global_metrics():
    a = daa_align([[0.9, 0.1, 0.0], [0.8, 0.2, 0.0], [0.0, 0.0, 1.0]])
    rep = global_metrics(a, [[0, 0], [1, 1], [2, 0]])
    assert rep.one_to_one_h1 == pytest.approx(2 / 3) and rep.conflict_count == 0


def test_global_metrics_unmatched_is_miss():
    a = daa_align(np.eye(2, 3))
    assert global_metrics(a, [[0, 0], [1, 1]]).one_to_one_h1 == 1.0
    short = daa_align(np.eye(3, 2))
    assert global_metrics(short, [[0, 0], [2, 1]]).one_to_one_h1 == 0.5


def test_global_rejects_many_to_one():
    with pytest.raises(ContractError):
        global_metrics(local_align([[5.0, 4.0], [5.0, 4.0]]), [[0, 0]])


def test_local_h1_and_conflicts():
    a = Alignment({0: 0, 1: 0, 2: 1, 3: 1}, "local")
    assert local_h1(a, [[0, 0], [1, 1]]) == 0.5
    assert conflicts_among(a, [0, 1, 2]) == 1
    assert conflicts_among(a, [0, 2]) == 0


def test_report_rendering():
    rep = MetricsReport({1: 0.5, 10: 1.0}, mrr=0.75, count=4).merged(
        MetricsReport(one_to_one_h1=0.6, conflict_count=0))
    text = rep.to_keyvalue()
    assert "hits@1=0.500000" in text and "one_to_one_h1=0.600000" in text
    assert rep.to_table().splitlines()[0].startswith("direction")
