import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgclust.graph import (
    GraphError,
    NodeLabeling,
    build_graph,
    graph_stats,
    neighbor_history,
)


def triples(max_n=8, max_e=30):
    return st.integers(1, max_n).flatmap(lambda n: st.tuples(
        st.just(n),
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1),
                           st.integers(0, 6).map(float)), max_size=max_e)))


def test_sorted_by_time():
    g = build_graph([(0, 1, 5.0), (2, 3, 1.0)], 4)
    assert [tuple(x) for x in g.interactions] == [(2, 3, 1.0), (0, 1, 5.0)]


def test_empty_graph_has_isolated_nodes():
    g = build_graph([], 3)
    assert g.num_interactions == 0
    assert all(g.history(u) == [] for u in range(3))


def test_tie_keeps_input_order():
    g = build_graph([(0, 1, 1.0), (1, 0, 1.0)], 2)
    assert [tuple(x) for x in g.interactions] == [(0, 1, 1.0), (1, 0, 1.0)]
    assert g.history(0) == [(1, 1.0), (1, 1.0)]


@pytest.mark.parametrize("bad, msg", [
    ([(0, 1, 1.0), (0, 5, 2.0)], "interaction 1"),
    ([(0, 1, -1.0)], "negative timestamp"),
    ([(0, 1, math.nan)], "not finite"),
    ([(-1, 1, 1.0)], "interaction 0"),
])
def test_rejections_name_the_interaction(bad, msg):
    with pytest.raises(GraphError, match=msg):
        build_graph(bad, 3)


def test_array_inputs_agree():
    data = [(2, 1, 3.0), (0, 1, 1.0), (1, 2, 2.0)]
    a = build_graph(data, 3)
    b = build_graph(np.array(data), 3)
    arr = np.array(data)
    c = build_graph((arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2]), 3)
    assert a == b == c


class TestNeighborHistory:
    @pytest.fixture
    def g(self):
        return build_graph([(0, 3, 1.0), (4, 0, 2.0), (0, 5, 3.0)], 6)

    def test_strictly_before(self, g):
        assert neighbor_history(g, 0, before=2.5, limit=5) == [(3, 1.0), (4, 2.0)]

    def test_most_recent_truncation(self, g):
        assert neighbor_history(g, 0, before=2.5, limit=1) == [(4, 2.0)]

    def test_nothing_earlier(self, g):
        assert neighbor_history(g, 0, before=0.5, limit=5) == []

    def test_equal_time_excluded(self, g):
        assert neighbor_history(g, 0, before=2.0) == [(3, 1.0)]

    def test_errors(self, g):
        with pytest.raises(GraphError):
            neighbor_history(g, 6)
        with pytest.raises(GraphError):
            neighbor_history(g, 0, limit=0)


@settings(max_examples=100, deadline=None)
@given(triples())
def test_history_invariants(case):
    n, data = case
    g = build_graph(data, n)
    assert np.all(np.diff(g.ts) >= 0)
    assert sum(len(g.history(u)) for u in range(n)) == 2 * len(data)
    # each node's history lists exactly its interactions, in sequence order
    for u in range(n):
        expect = []
        for x in g.interactions:
            if x.source == u:
                expect.append((x.target, x.timestamp))
            if x.target == u:
                expect.append((x.source, x.timestamp))
        assert neighbor_history(g, u) == expect
    # replaying histories reconstructs the interaction multiset (two entries each)
    seen = {}
    for u in range(n):
        for v, t in g.history(u):
            key = (min(u, v), max(u, v), t)
            seen[key] = seen.get(key, 0) + 1
    expect = {}
    for u, v, t in data:
        key = (min(u, v), max(u, v), float(t))
        expect[key] = expect.get(key, 0) + 2
    assert seen == expect
    # idempotent rebuild
    assert build_graph([tuple(x) for x in g.interactions], n) == g


@settings(max_examples=60, deadline=None)
@given(triples(), st.integers(1, 4))
def test_history_windows_match_scalar_lookup(case, limit):
    n, data = case
    g = build_graph(data, n)
    if not data:
        return
    nbrs, times, mask = g.history_windows(g.src, g.time_rank, limit)
    for e in range(g.num_interactions):
        ref = neighbor_history(g, int(g.src[e]), before=float(g.ts[e]), limit=limit)
        got = [(int(a), float(b)) for a, b, m in zip(nbrs[e], times[e], mask[e]) if m]
        assert got == ref
        assert not mask[e][limit - len(ref):].size or mask[e][limit - len(ref):].all()


def test_stats_multiplicity_collapse():
    s = graph_stats(build_graph([(0, 1, 1.0), (0, 1, 2.0)], 2))
    assert s.interactions == 2 and s.edges == 1


def test_stats_star():
    g = build_graph([(0, leaf, float(leaf)) for leaf in range(1, 6)], 6)
    s = graph_stats(g)
    assert (s.max_interactions, s.min_interactions) == (5, 1)
    assert s.nodes == 6 and s.edges == 5 and s.timestamps == 5
    assert s.mean_degree == pytest.approx(10 / 6)


def test_stats_self_interactions_counted():
    s = graph_stats(build_graph([(0, 0, 1.0), (0, 1, 2.0)], 2))
    assert s.self_interactions == 1
    assert s.max_interactions == 2  # node 0: the loop once plus the edge


def test_labeling_validation():
    lab = NodeLabeling.from_labels([0, 1, 1, 0])
    assert lab.K == 2 and len(lab) == 4
    with pytest.raises(GraphError, match="never used"):
        NodeLabeling(np.array([0, 0, 2]), 3)
    with pytest.raises(GraphError):
        NodeLabeling(np.array([0, 3]), 2)
