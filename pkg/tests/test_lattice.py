import itertools
import json
from math import comb, exp
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ymlattice.lattice import (ClusterBudgetError, EdgeRef, LatticeGeometry, Loop, PlaquetteRef,
                               cluster_count_bound, enumerate_clusters, enumerate_edges, enumerate_plaquettes,
                               expected_counts, geometry_summary, graph_distance, is_cluster,
                               plaquettes_containing, plaquettes_first_edge, sgn)

FIX = Path(__file__).parent / "fixtures"


@pytest.mark.parametrize("d,L", [(2, 1), (2, 2), (3, 1), (3, 2), (4, 1)])
def test_counts_match_formulas(d, L):
    g = LatticeGeometry(d, L)
    assert g.n_vertices == (2 * L + 1) ** d
    assert g.n_edges == d * 2 * L * (2 * L + 1) ** (d - 1)
    assert g.n_plaquettes == comb(d, 2) * (2 * L) ** 2 * (2 * L + 1) ** (d - 2)
    assert expected_counts(d, L)["edges"] == g.n_edges


def test_spec_counts():
    assert len(enumerate_edges(LatticeGeometry(2, 1))) == 12
    assert len(enumerate_edges(LatticeGeometry(3, 1))) == 54
    assert len(enumerate_plaquettes(LatticeGeometry(2, 1))) == 4
    assert len(enumerate_plaquettes(LatticeGeometry(3, 1))) == 36
    assert len(enumerate_plaquettes(LatticeGeometry(2, 2))) == 16


def test_degenerate_lattice_rejected():
    with pytest.raises(ValueError):
        LatticeGeometry(2, 0)
    with pytest.raises(ValueError):
        LatticeGeometry(1, 3)


def test_enumeration_order_is_lexicographic_and_stable():
    g = LatticeGeometry(3, 1)
    keys = [(tuple(e.base), e.axis) for e in enumerate_edges(g)]
    assert keys == sorted(keys)
    assert [g.edge_index(e) for e in enumerate_edges(g)] == list(range(g.n_edges))
    assert enumerate_edges(g) == enumerate_edges(LatticeGeometry(3, 1))


def test_golden_geometry_fixture():
    gold = json.loads((FIX / "geometry_golden.json").read_text())
    for key, summary in gold.items():
        d, L = (int(x) for x in key[1:].split("_L"))
        assert geometry_summary(LatticeGeometry(d, L)) == summary


def test_sgn_examples():
    p = PlaquetteRef((0, 0), (0, 1))
    e1, e2, e3, e4 = p.edges()
    assert sgn(e1, p) == 1
    # top edge as a positive edge: the plaquette traverses it leftward
    top = EdgeRef((0, 1), 0, 1)
    assert e3 == top.inverse()
    assert sgn(top, p) == -1
    assert sgn(EdgeRef((2, 2), 0), p) == 0


def test_traversal_closes_with_distinct_edges():
    g = LatticeGeometry(3, 1)
    for p in enumerate_plaquettes(g):
        for q in (p, p.inverse(), PlaquetteRef(p.base, p.axes, 1, 2)):
            Loop.from_plaquette(q)  # raises if not closed
            assert len({e.positive() for e in q.edges()}) == 4


def test_sign_symmetries():
    g = LatticeGeometry(2, 1)
    for p in enumerate_plaquettes(g):
        for e in enumerate_edges(g):
            assert sgn(e, p) == -sgn(e, p.inverse())
            assert sgn(e.inverse(), p) == -sgn(e, p)
    assert int(np.abs(g.sign_matrix()).sum()) == 4 * g.n_plaquettes


def test_edge_inverse_involution():
    e = EdgeRef((1, -1, 0), 2, 1)
    assert e.inverse().inverse() == e
    assert e.inverse().positive() == e


def test_plaquettes_containing():
    g2 = LatticeGeometry(2, 2)
    assert len(plaquettes_containing(g2, EdgeRef((0, 0), 0))) == 2
    assert len(plaquettes_containing(g2, EdgeRef((0, -2), 0))) == 1
    g3 = LatticeGeometry(3, 2)
    assert len(plaquettes_containing(g3, EdgeRef((0, 0, 0), 1))) == 4


def test_plaquettes_first_edge():
    g = LatticeGeometry(2, 2)
    for e, n in ((EdgeRef((0, 0), 0), 2), (EdgeRef((0, -2), 0), 1)):
        out = plaquettes_first_edge(g, e)
        assert len(out) == n
        for q, sign in out:
            first = q.edges()[0]
            assert first.positive() == e
            assert sign == sgn(e, q) == first.orientation


def test_graph_distance_examples():
    g = LatticeGeometry(2, 2)
    a = [EdgeRef((0, 0), 0)]
    assert graph_distance(g, a, a) == 0
    assert graph_distance(g, a, [EdgeRef((0, 1), 0)]) == 1
    assert graph_distance(g, [EdgeRef((-2, -2), 0)], [EdgeRef((1, 2), 0)]) == 6
    with pytest.raises(ValueError):
        graph_distance(g, [], a)


@given(st.lists(st.integers(0, 39), min_size=1, max_size=3), st.lists(st.integers(0, 39), min_size=1, max_size=3),
       st.lists(st.integers(0, 39), min_size=1, max_size=3))
def test_graph_distance_triangle(a, b, c):
    g = LatticeGeometry(2, 2)
    # edge sets are not points, so the triangle inequality needs the diameter of the middle set
    diam_b = max(graph_distance(g, [x], [y]) for x in b for y in b) + 1
    assert graph_distance(g, a, c) <= graph_distance(g, a, b) + graph_distance(g, b, c) + diam_b


def _brute_force_counts(g, seed, m_max):
    """Independent count: all plaquette subsets near the seed, filtered by a union-find connectivity test."""
    tail = np.array(g.edge_ref(seed).base)
    near = [p for p in range(g.n_plaquettes) if np.abs(g.vertex_coords[g.plaq_base[p]] - tail).sum() <= m_max + 1]
    sets = [set(int(e) for e in g.plaq_edges[p]) for p in range(g.n_plaquettes)]
    out = [1]
    for m in range(1, m_max + 1):
        n = 0
        for K in itertools.combinations(near, m):
            parent = list(range(m))

            def find(i):
                while parent[i] != i:
                    i = parent[i]
                return i
            for i, j in itertools.combinations(range(m), 2):
                if sets[K[i]] & sets[K[j]]:
                    parent[find(i)] = find(j)
            roots = {}
            for i in range(m):
                roots.setdefault(find(i), []).append(K[i])
            if all(any(seed in sets[p] for p in comp) for comp in roots.values()):
                n += 1
        out.append(n)
    return out


def test_cluster_counts_fixture_and_bound():
    fx = json.loads((FIX / "cluster_counts_d2.json").read_text())
    g = LatticeGeometry(2, fx["L"])
    seed = g.edge_index(EdgeRef(tuple(fx["seed_edge"][0]), fx["seed_edge"][1]))
    levels = enumerate_clusters(g, [seed], fx["m_max"])
    counts = [len(levels[m]) for m in range(fx["m_max"] + 1)]
    assert counts == fx["counts"] == [1, 2, 7, 30, 123]
    assert counts[:4] == _brute_force_counts(g, seed, 3)
    for m, c in enumerate(counts):
        assert c <= cluster_count_bound(2, 1, m) == pytest.approx(exp(4) * 40.0 ** (2 * m))


def test_cluster_enumeration_properties():
    g = LatticeGeometry(2, 3)
    seeds = [g.edge_index(EdgeRef((0, 0), 0)), g.edge_index(EdgeRef((2, 1), 1))]
    levels = enumerate_clusters(g, seeds, 3)
    assert len(levels[0]) == 1 and len(levels[0][0]) == 0
    for m, lst in levels.items():
        keys = [c.plaquettes for c in lst]
        assert len(keys) == len(set(keys))
        for c in lst:
            assert len(c) == m and is_cluster(g, c.plaquettes, seeds)
            # removing a plaquette either stays valid or strands a component
            for p in c.plaquettes:
                rest = c.plaquettes - {p}
                if is_cluster(g, rest, seeds):
                    assert any(rest == k.plaquettes for k in levels[m - 1])
    # completeness at m = 2 by exhaustive filtering
    exhaustive = {frozenset(K) for K in itertools.combinations(range(g.n_plaquettes), 2) if is_cluster(g, K, seeds)}
    assert exhaustive == {c.plaquettes for c in levels[2]}


def test_cluster_budget_error():
    g = LatticeGeometry(2, 5)
    with pytest.raises(ClusterBudgetError):
        enumerate_clusters(g, [0], 6, max_clusters=100)


def test_loop_validation():
    with pytest.raises(ValueError):
        Loop((EdgeRef((0, 0), 0), EdgeRef((0, 0), 1)))
    r = Loop.rectangle((0, 0), (0, 1), (2, 1))
    assert len(r) == 6
