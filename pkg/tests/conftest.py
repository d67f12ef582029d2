import numpy as np
import pytest
from hypothesis import strategies as st

from raga.kg import KnowledgeGraph


def random_kg(rng, n_entities, n_relations, n_triples, self_loops=False):
    triples = set()
    cap = n_entities * (n_entities if self_loops else n_entities - 1) * n_relations
    while len(triples) < min(n_triples, cap):
        h, t = (int(v) for v in rng.integers(0, n_entities, size=2))
        if h == t and not self_loops:
            continue
        triples.add((h, int(rng.integers(0, n_relations)), t))
    return KnowledgeGraph.from_triples(sorted(triples), n_entities, n_relations)


@st.composite
def graphs(draw, max_entities=12, max_relations=4, max_triples=30):
    n = draw(st.integers(1, max_entities))
    m = draw(st.integers(1, max_relations))
    triple = st.tuples(st.integers(0, n - 1), st.integers(0, m - 1), st.integers(0, n - 1))
    rows = draw(st.lists(triple, max_size=max_triples))
    return KnowledgeGraph.from_triples(rows, n, m)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion in the terminal summary
_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed and not report.skipped):
        return
    number, title = marker.args
    status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    prev = _criteria.get(number, (title, "PASS"))[1]
    rank = {"PASS": 0, "SKIP": 1, "FAIL": 2}
    _criteria[number] = (title, status if rank[status] > rank[prev] else prev)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
