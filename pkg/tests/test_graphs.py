from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from mvglmm.core import RESPONSES
from mvglmm.graphs import (
    ExtendedGraph, GraphError, UndirectedGraph, build_extended_graph, check_wermuth, dot_extended, dot_undirected,
    extended_separates, find_path, fixture_graph, fixture_labels, latent, observable, resolve_label, separates,
    structural_hamming_distance,
)

BONUS = fixture_graph("fig1b_bonus")
NO_BONUS = fixture_graph("fig1a_no_bonus")


def rest(*exclude):
    return [v for v in RESPONSES if v not in exclude]


def separated_by_enumeration(graph, A, B, S):
    """Exhaustive simple-path enumeration: any A-B path avoiding S breaks separation."""
    adj = graph.adjacency()

    def dfs(v, seen):
        if v in B:
            return True
        return any(dfs(w, seen | {w}) for w in adj[v] if w not in seen and w not in S)

    return not any(dfs(a, {a}) for a in A)


def random_instance(rng: random.Random):
    p = rng.randint(2, 7)
    labels = tuple(f"v{k}" for k in range(p))
    dens = rng.random()
    edges = [(a, b) for i, a in enumerate(labels) for b in labels[i + 1:] if rng.random() < dens]
    order = list(labels)
    rng.shuffle(order)
    k_a = rng.randint(1, p - 1)
    k_b = rng.randint(1, p - k_a)
    A, B = order[:k_a], order[k_a:k_a + k_b]
    left = order[k_a + k_b:]
    S = [v for v in left if rng.random() < 0.5]
    return UndirectedGraph(labels, edges), A, B, S


def test_fixture_separation_facts():
    assert separates(BONUS, ["Geom"], rest("Geom", "Math"), ["Math"])
    assert separates(NO_BONUS, ["Geom"], rest("Geom", "Port"), ["Port"])
    for g in (BONUS, NO_BONUS):
        assert separates(g, ["Math", "Phys", "Chem"], ["His", "Geo"], ["Bio"])


def test_empty_graph_separates_everything():
    g = UndirectedGraph.empty(RESPONSES)
    assert separates(g, ["Math", "Bio"], ["Geom"])


def test_witness_path():
    assert find_path(BONUS, ["Geom"], ["Phys"]) == ["Geom", "Math", "Phys"]
    assert not separates(BONUS, ["Geom"], ["Phys"])


def test_separation_against_enumeration():
    rng = random.Random(1234)
    for _ in range(200):
        g, A, B, S = random_instance(rng)
        assert separates(g, A, B, S) == separated_by_enumeration(g, set(A), set(B), set(S))


@given(st.integers(0, 100_000))
@settings(max_examples=100, deadline=None)
def test_separation_monotone_in_S(seed):
    rng = random.Random(seed)
    g, A, B, S = random_instance(rng)
    if separates(g, A, B, S):
        extra = [v for v in g.vertices if v not in A and v not in B and v not in S and rng.random() < 0.5]
        assert separates(g, A, B, list(S) + extra)


def test_set_validation():
    with pytest.raises(GraphError):
        separates(BONUS, ["Math"], ["Math"])
    with pytest.raises(GraphError):
        separates(BONUS, ["Math"], ["Bio"], ["Math"])
    with pytest.raises(GraphError):
        separates(BONUS, ["Nope"], ["Bio"])
    with pytest.raises(GraphError):
        separates(BONUS, [], ["Bio"])


def test_graph_validation_and_shd():
    with pytest.raises(GraphError):
        UndirectedGraph(("a", "b"), [("a", "a")])
    with pytest.raises(GraphError):
        UndirectedGraph(("a", "b"), [("a", "c")])
    assert structural_hamming_distance(BONUS, NO_BONUS) == len(BONUS.edges ^ NO_BONUS.edges)
    assert structural_hamming_distance(BONUS, BONUS) == 0


def test_fixture_edges_and_labels():
    assert len(BONUS.edges) == 7 and len(NO_BONUS.edges) == 7
    assert fixture_labels("fig1b_bonus")[frozenset(("Geom", "Math"))] == 0.118
    assert fixture_labels("fig1a_no_bonus")[frozenset(("His", "Geo"))] == 0.391
    with pytest.raises(GraphError):
        fixture_graph("fig9")


@pytest.mark.parametrize("g", [BONUS, NO_BONUS, UndirectedGraph.empty(RESPONSES), UndirectedGraph.complete(RESPONSES)])
def test_extended_graph_structure(g):
    eg = build_extended_graph(g)
    moral = eg.moral_graph
    assert len(moral.vertices) == 16
    for r in RESPONSES:
        assert len(moral.neighbors(observable(r))) == 1
        assert eg.parents(observable(r)) == [latent(r)]
    assert eg.latent_subgraph.edges == frozenset(frozenset((latent(a), latent(b))) for a, b in g.edges)
    assert len(moral.edges) == len(g.edges) + 8
    assert check_wermuth(eg)


def test_no_bonus_moral_graph_has_15_edges():
    assert len(build_extended_graph(NO_BONUS).moral_graph.edges) == 15


def test_empty_latent_gives_perfect_matching():
    moral = build_extended_graph(UndirectedGraph.empty(RESPONSES)).moral_graph
    assert moral.edges == frozenset(frozenset((latent(r), observable(r))) for r in RESPONSES)


def test_wermuth_hand_built():
    bad = ExtendedGraph.from_parts(("a", "b", "c"), [], [("a", "c"), ("b", "c")], ("a", "b"))
    assert not check_wermuth(bad)
    assert bad.moral_graph.has_edge("a", "b")  # moralization marries them anyway
    good = ExtendedGraph.from_parts(("a", "b", "c"), [("a", "b")], [("a", "c"), ("b", "c")], ("a", "b"))
    assert check_wermuth(good)


def test_build_extended_requires_canonical_vertices():
    with pytest.raises(GraphError):
        build_extended_graph(UndirectedGraph(("a", "b")))


def test_extended_separation():
    eb = build_extended_graph(BONUS)
    B = [observable(r) for r in ("Phys", "Chem", "Bio", "His", "Geo", "Port")]
    assert extended_separates(eb, ["T[Geom]"], B, [latent("Math")])
    with pytest.raises(GraphError, match="latent"):
        extended_separates(eb, ["T[Geom]"], B, ["Y[Math]"])
    en = build_extended_graph(NO_BONUS)
    assert extended_separates(en, ["T[Geom]"], ["Y[Math]"], ["V[Port]"])
    assert not extended_separates(en, ["T[Geom]"], ["Y[Math]"], [])


def test_extended_equals_moral_separation():
    rng = random.Random(7)
    for _ in range(50):
        labels = list(RESPONSES)
        g = UndirectedGraph(RESPONSES, [(a, b) for i, a in enumerate(labels) for b in labels[i + 1:]
                                        if rng.random() < 0.25])
        eg = build_extended_graph(g)
        rng.shuffle(labels)
        A, B = [observable(labels[0])], [observable(x) for x in labels[1:3]]
        S = [latent(x) for x in labels[3:] if rng.random() < 0.5]
        assert extended_separates(eg, A, B, S) == separates(eg.moral_graph, A, B, S)


def test_label_resolution():
    assert resolve_label("math") == "Math"
    assert resolve_label("V[Geom]") == "Geom"
    assert resolve_label("Y[Math]", extended=True) == "Y[Math]"
    assert resolve_label("T[Geom]", extended=True) == "T[Geom]"
    with pytest.raises(GraphError):
        resolve_label("Y[Geom]", extended=True)
    with pytest.raises(GraphError):
        resolve_label("Math", extended=True)


def test_dot_exports():
    dot = dot_undirected(NO_BONUS, fixture_labels("fig1a_no_bonus"), "no_bonus")
    assert '"Math" -- "Phys" [label="0.570"];' in dot or '"Phys" -- "Math" [label="0.570"];' in dot
    empty = dot_undirected(UndirectedGraph.empty(RESPONSES))
    assert "--" not in empty and all(f'"{r}";' in empty for r in RESPONSES)
    ext = dot_extended(build_extended_graph(BONUS))
    assert '"V[Math]" [shape=circle];' in ext and '"T[Geom]" [shape=box];' in ext
    assert '"V[Geom]" -> "T[Geom]";' in ext
