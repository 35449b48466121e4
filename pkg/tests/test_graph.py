import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covsel import graph as G
from covsel.graph import AssumptionError, CycleError, Dag, GraphError
from covsel.sem import case_model, figure1_model

from .oracles import dag_from_bits, dfs_descendants, path_d_separated, random_dag


@pytest.fixture
def fig1() -> Dag:
    return figure1_model().graph


def dags(max_nodes=8):
    def build(n):
        m = n * (n - 1) // 2
        return st.lists(st.booleans(), min_size=m, max_size=m).map(lambda bits: dag_from_bits(n, bits))

    return st.integers(2, max_nodes).flatmap(build)


# --- construction ----------------------------------------------------------


def test_cycle_rejected():
    with pytest.raises(CycleError):
        Dag("abc", [("a", "b"), ("b", "c"), ("c", "a")])


def test_self_loop_and_duplicate_edge_rejected():
    with pytest.raises(GraphError):
        Dag(["a"], [("a", "a")])
    with pytest.raises(GraphError):
        Dag("ab", [("a", "b"), ("a", "b")])


def test_unknown_node_query():
    g = Dag("ab", [("a", "b")])
    with pytest.raises(GraphError):
        g.parents("zz")


def test_topological_order_natural_ties():
    g = Dag(["Z10", "Z2", "Z1"], [])
    assert g.topological_order() == ("Z1", "Z2", "Z10")


@given(dags())
def test_topological_order_respects_edges(g):
    pos = {v: i for i, v in enumerate(g.topological_order())}
    assert all(pos[u] < pos[v] for u, v in g.edges)


# --- parents / descendants --------------------------------------------------


def test_parents_examples(fig1):
    assert fig1.parents("Y") == {"X", "Z2"}
    assert Dag(["v"]).parents("v") == frozenset()
    assert G.parents(Dag("ABC", [("A", "B"), ("B", "C")]), "C") == {"B"}


def test_descendants_examples(fig1):
    assert fig1.descendants("Z1") == {"X", "Z2", "Z3", "Y"}
    assert Dag(["a", "b"]).descendants("a") == frozenset()


@given(dags())
def test_descendants_match_dfs(g):
    for v in g.nodes:
        assert g.descendants(v) == dfs_descendants(g, v)
        assert all(v in g.ancestors(w) for w in g.descendants(v))


# --- d-separation -------------------------------------------------------------


def test_d_separation_examples(fig1):
    assert G.d_separated(fig1, "Z1", "Y", {"X", "Z2", "Z3"})
    assert not G.d_separated(fig1, "Z3", "Y", {"X", "Z1"})
    assert G.d_separated(Dag(["a", "b"]), "a", "b", set())


def test_collider_opens_on_descendant():
    g = Dag("abcd", [("a", "c"), ("b", "c"), ("c", "d")])
    assert G.d_separated(g, "a", "b", ())
    assert not G.d_separated(g, "a", "b", {"c"})
    assert not G.d_separated(g, "a", "b", {"d"})


def test_d_separation_rejects_endpoint_in_cond(fig1):
    with pytest.raises(GraphError):
        G.d_separated(fig1, "X", "Y", {"X"})


def _all_triples(g):
    nodes = list(g.nodes)
    for a, b in itertools.combinations(nodes, 2):
        rest = [v for v in nodes if v not in (a, b)]
        for r in range(len(rest) + 1):
            for cond in itertools.combinations(rest, r):
                yield a, b, set(cond)


def test_d_separation_matches_path_oracle_seeded():
    rng = np.random.default_rng(11)
    for _ in range(60):
        g = random_dag(rng, int(rng.integers(2, 7)))
        for a, b, cond in _all_triples(g):
            assert G.d_separated(g, a, b, cond) == path_d_separated(g, a, b, cond), (g, a, b, cond)


@settings(max_examples=60, deadline=None)
@given(dags(6))
def test_d_separation_symmetric_and_matches_oracle(g):
    for a, b, cond in _all_triples(g):
        got = G.d_separated(g, a, b, cond)
        assert got == G.d_separated(g, b, a, cond)
        assert got == path_d_separated(g, a, b, cond)


# --- predictors, d-adjacency ---------------------------------------------------


def test_predictors_examples(fig1):
    assert G.predictors_of(fig1, "Y", "X", {"Z1", "Z2", "Z3"}) == {"Z2"}
    assert G.predictors_of(fig1, "Y", "X", {"Z2", "Z3"}) == {"Z2"}
    assert G.predictors_of(fig1, "Y", "X", set()) == frozenset()


def test_predictors_with_hidden_mediator(fig1):
    # Z2 unobserved: both Z1 and Z3 carry information about Y
    assert G.predictors_of(fig1, "Y", "X", {"Z1", "Z3"}) == {"Z1", "Z3"}


def test_d_adjacent_examples(fig1):
    z = {"X", "Z1", "Z3", "Y"}
    assert G.d_adjacent(fig1, "Z1", "Y", z)
    assert G.d_adjacent(fig1, "Z3", "Y", z)
    for u, v in fig1.edges:
        assert G.d_adjacent(fig1, u, v, set(fig1.nodes))


@settings(max_examples=80, deadline=None)
@given(dags(7), st.data())
def test_predictors_are_d_adjacent_members(g, data):
    nodes = list(g.nodes)
    y, x = data.draw(st.permutations(nodes))[:2]
    rest = [v for v in nodes if v not in (x, y)]
    z = set(data.draw(st.lists(st.sampled_from(rest), unique=True))) if rest else set()
    expected = {w for w in z if G.d_adjacent(g, w, y, {x} | z)}
    assert G.predictors_of(g, y, x, z) == expected


# --- adjustment sets -------------------------------------------------------------


def test_valid_adjustment_examples(fig1):
    assert G.is_valid_adjustment(fig1, "X", "Y", {"Z1"})
    assert not G.is_valid_adjustment(fig1, "X", "Y", {"Z3"})
    assert G.is_valid_adjustment(Dag("XY", [("X", "Y")]), "X", "Y", set())


def test_descendant_of_treatment_invalid():
    g = Dag(["X", "M", "Y"], [("X", "M"), ("M", "Y")])
    assert not G.is_valid_adjustment(g, "X", "Y", {"M"})


def test_optimal_adjustment_examples(fig1):
    assert G.optimal_adjustment(fig1, "X", "Y") == {"Z2"}
    assert G.optimal_adjustment(Dag("XY", [("X", "Y")]), "X", "Y") == frozenset()
    g = case_model(1).graph
    assert G.optimal_adjustment(g, "X", "Y") == {f"Z{i}" for i in range(1, 21)}


def test_optimal_adjustment_refuses_descendants():
    g = Dag(["X", "Y", "W"], [("X", "Y"), ("Y", "W")])
    with pytest.raises(AssumptionError):
        G.optimal_adjustment(g, "X", "Y")


@settings(max_examples=100, deadline=None)
@given(dags(7), st.data())
def test_optimal_set_is_valid_when_covariates_precede(g, data):
    order = g.topological_order()
    i = data.draw(st.integers(0, len(order) - 2))
    j = data.draw(st.integers(i + 1, len(order) - 1))
    x, y = order[i], order[j]
    if y not in g.descendants(x):
        return
    covs = [v for v in g.nodes if v not in (x, y) and v not in g.descendants(x) | g.descendants(y)]
    if not covs:
        return
    sub = Dag([x, y, *covs], [(u, v) for u, v in g.edges if {u, v} <= {x, y, *covs}])
    if y not in sub.descendants(x):
        return
    assert G.is_valid_adjustment(sub, x, y, G.optimal_adjustment(sub, x, y))


# --- edge-list format ---------------------------------------------------------------


def test_edge_list_roundtrip():
    text = "# demo\nZ1 -> X 1.5\nX -> Y\nlonely\n"
    g, w = G.parse_edge_list(text)
    assert g.edges == {("Z1", "X"), ("X", "Y")}
    assert "lonely" in g
    assert w == {("Z1", "X"): 1.5}
    g2, w2 = G.parse_edge_list(G.format_edge_list(g, w))
    assert g2 == g and w2 == w


def test_edge_list_errors():
    with pytest.raises(GraphError):
        G.parse_edge_list("a -> b oops")
    with pytest.raises(GraphError):
        G.parse_edge_list("a -> b\nb -> a")
