"""Undirected graphs, separation queries and the latent/observable extended graph."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping

import networkx as nx

from .core import RESPONSES, SURVIVAL_RESPONSE


class GraphError(ValueError):
    pass


def _edge(a: str, b: str) -> frozenset:
    if a == b:
        raise GraphError(f"self-loop on {a!r}")
    return frozenset((a, b))


@dataclass(frozen=True)
class UndirectedGraph:
    vertices: tuple[str, ...]
    edges: frozenset[frozenset[str]]

    def __init__(self, vertices: Iterable[str], edges: Iterable[Iterable[str]] = ()):
        vertices = tuple(vertices)
        if len(set(vertices)) != len(vertices):
            raise GraphError("duplicate vertex labels")
        vs = set(vertices)
        es = set()
        for e in edges:
            a, b = tuple(e)
            if a not in vs or b not in vs:
                raise GraphError(f"edge ({a!r}, {b!r}) references an unknown vertex")
            es.add(_edge(a, b))
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "edges", frozenset(es))

    def neighbors(self, v: str) -> set[str]:
        return {w for e in self.edges if v in e for w in e if w != v}

    def adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {v: set() for v in self.vertices}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def has_edge(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.edges

    def index_pairs(self) -> list[tuple[int, int]]:
        """Edges as sorted vertex-index pairs, lexicographically ordered."""
        pos = {v: k for k, v in enumerate(self.vertices)}
        return sorted(tuple(sorted((pos[a], pos[b]))) for a, b in (tuple(e) for e in self.edges))

    def sorted_edges(self) -> list[tuple[str, str]]:
        return [(self.vertices[i], self.vertices[j]) for i, j in self.index_pairs()]

    def with_edge(self, a: str, b: str) -> "UndirectedGraph":
        return UndirectedGraph(self.vertices, self.edges | {_edge(a, b)})

    def without_edge(self, a: str, b: str) -> "UndirectedGraph":
        return UndirectedGraph(self.vertices, self.edges - {frozenset((a, b))})

    def induced(self, keep: Iterable[str]) -> "UndirectedGraph":
        keep = [v for v in self.vertices if v in set(keep)]
        ks = set(keep)
        return UndirectedGraph(keep, [e for e in self.edges if e <= ks])

    def cliques(self) -> list[tuple[str, ...]]:
        """Maximal cliques in a deterministic order (isolated vertices included)."""
        g = nx.Graph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(tuple(e) for e in self.edges)
        pos = {v: k for k, v in enumerate(self.vertices)}
        found = [tuple(sorted(c, key=pos.__getitem__)) for c in nx.find_cliques(g)]
        return sorted(found, key=lambda c: [pos[v] for v in c])

    @classmethod
    def complete(cls, vertices: Iterable[str]) -> "UndirectedGraph":
        vertices = tuple(vertices)
        return cls(vertices, combinations(vertices, 2))

    @classmethod
    def empty(cls, vertices: Iterable[str]) -> "UndirectedGraph":
        return cls(tuple(vertices), ())


def structural_hamming_distance(g: UndirectedGraph, h: UndirectedGraph) -> int:
    if set(g.vertices) != set(h.vertices):
        raise GraphError("graphs have different vertex sets")
    return len(g.edges ^ h.edges)


def _check_sets(graph: UndirectedGraph, A, B, S):
    A, B, S = set(A), set(B), set(S)
    unknown = (A | B | S) - set(graph.vertices)
    if unknown:
        raise GraphError(f"unknown vertex labels: {sorted(unknown)}")
    if not A or not B:
        raise GraphError("A and B must be non-empty")
    if A & B or A & S or B & S:
        raise GraphError("A, B and S must be pairwise disjoint")
    return A, B, S


def find_path(graph: UndirectedGraph, A, B, S=()) -> list[str] | None:
    """Shortest path from A to B avoiding S, or None when S separates them."""
    A, B, S = _check_sets(graph, A, B, S)
    adj = graph.adjacency()
    order = {v: k for k, v in enumerate(graph.vertices)}
    parent: dict[str, str | None] = {a: None for a in sorted(A, key=order.__getitem__)}
    queue = deque(parent)
    while queue:
        v = queue.popleft()
        if v in B:
            path = [v]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for w in sorted(adj[v], key=order.__getitem__):
            if w not in parent and w not in S:
                parent[w] = v
                queue.append(w)
    return None


def separates(graph: UndirectedGraph, A, B, S=()) -> bool:
    """True iff every path between A and B passes through S."""
    return find_path(graph, A, B, S) is None


# ---- fixture graphs -----------------------------------------------------------

FIG1A_NO_BONUS: dict[tuple[str, str], float] = {
    ("His", "Geo"): 0.391,
    ("His", "Port"): 0.361,
    ("Geom", "Port"): 0.256,
    ("Phys", "Math"): 0.570,
    ("Chem", "Math"): 0.188,
    ("Bio", "Chem"): 0.268,
    ("Bio", "Geo"): 0.330,
}

FIG1B_BONUS: dict[tuple[str, str], float] = {
    ("His", "Geo"): 0.349,
    ("His", "Port"): 0.242,
    ("Geom", "Math"): 0.118,
    ("Phys", "Math"): 0.515,
    ("Bio", "Math"): 0.133,
    ("Chem", "Math"): 0.253,
    ("Bio", "Geo"): 0.201,
}

FIXTURES: dict[str, dict[tuple[str, str], float]] = {
    "fig1a_no_bonus": FIG1A_NO_BONUS,
    "fig1b_bonus": FIG1B_BONUS,
}


def fixture_graph(name: str) -> UndirectedGraph:
    if name not in FIXTURES:
        raise GraphError(f"unknown fixture {name!r}; available: {sorted(FIXTURES)}")
    return UndirectedGraph(RESPONSES, FIXTURES[name].keys())


def fixture_labels(name: str) -> dict[frozenset, float]:
    return {frozenset(k): v for k, v in FIXTURES[name].items()}


# ---- extended graph -----------------------------------------------------------

def latent(label: str) -> str:
    return f"V[{label}]"


def observable(label: str) -> str:
    return f"T[{label}]" if label == SURVIVAL_RESPONSE else f"Y[{label}]"


@dataclass(frozen=True)
class ExtendedGraph:
    """Undirected part plus arrows (latent -> observable); the moral graph is cached."""

    undirected: UndirectedGraph
    directed_edges: tuple[tuple[str, str], ...]
    latent_vertices: frozenset[str]
    moral_graph: UndirectedGraph

    @classmethod
    def from_parts(cls, vertices: Iterable[str], undirected: Iterable[Iterable[str]],
                   directed: Iterable[tuple[str, str]], latent_vertices: Iterable[str]) -> "ExtendedGraph":
        vertices = tuple(vertices)
        directed = tuple((a, b) for a, b in directed)
        vs = set(vertices)
        for a, b in directed:
            if a not in vs or b not in vs:
                raise GraphError(f"arrow {a!r}->{b!r} references an unknown vertex")
        und = UndirectedGraph(vertices, undirected)
        return cls(und, directed, frozenset(latent_vertices), moralize(und, directed))

    @property
    def vertices(self) -> tuple[str, ...]:
        return self.undirected.vertices

    @property
    def latent_subgraph(self) -> UndirectedGraph:
        return self.undirected.induced(self.latent_vertices)

    def parents(self, child: str) -> list[str]:
        return [a for a, b in self.directed_edges if b == child]


def moralize(undirected: UndirectedGraph, directed: Iterable[tuple[str, str]]) -> UndirectedGraph:
    """Marry co-parents, then drop arrow directions."""
    directed = list(directed)
    edges = set(undirected.edges)
    parents: dict[str, list[str]] = {}
    for a, b in directed:
        parents.setdefault(b, []).append(a)
        edges.add(_edge(a, b))
    for ps in parents.values():
        for a, b in combinations(sorted(set(ps)), 2):
            edges.add(_edge(a, b))
    return UndirectedGraph(undirected.vertices, edges)


def build_extended_graph(latent_graph: UndirectedGraph) -> ExtendedGraph:
    if set(latent_graph.vertices) != set(RESPONSES) or len(latent_graph.vertices) != len(RESPONSES):
        raise GraphError(f"latent graph must have exactly the vertices {RESPONSES}")
    lat = [latent(r) for r in RESPONSES]
    obs = [observable(r) for r in RESPONSES]
    und = [(latent(a), latent(b)) for a, b in latent_graph.sorted_edges()]
    arrows = [(latent(r), observable(r)) for r in RESPONSES]
    return ExtendedGraph.from_parts(lat + obs, und, arrows, lat)


def check_wermuth(extended: ExtendedGraph) -> bool:
    """True iff no vertex has two parents that are not adjacent."""
    arrows = {frozenset(e) for e in extended.directed_edges}
    for child in extended.vertices:
        for a, b in combinations(extended.parents(child), 2):
            if not (extended.undirected.has_edge(a, b) or frozenset((a, b)) in arrows):
                return False
    return True


def extended_separates(extended: ExtendedGraph, A, B, S) -> bool:
    """Separation of observables A and B by latent components S on the moral graph."""
    A, B, S = set(A), set(B), set(S)
    observables = set(extended.vertices) - extended.latent_vertices
    if not A <= observables or not B <= observables:
        raise GraphError("A and B must contain observable responses only")
    if not S <= extended.latent_vertices:
        bad = sorted(S - extended.latent_vertices)
        raise GraphError(f"conditioning set must contain latent components only; got {bad}")
    return separates(extended.moral_graph, A, B, S)


def extended_find_path(extended: ExtendedGraph, A, B, S) -> list[str] | None:
    extended_separates(extended, A, B, S)  # validation
    return find_path(extended.moral_graph, A, B, S)


def resolve_label(label: str, extended: bool = False) -> str:
    """Map user labels like ``Math``, ``V[Math]``, ``Y[Math]``, ``T[Geom]`` to vertex names."""
    label = label.strip()
    lookup = {r.lower(): r for r in RESPONSES}
    if not extended:
        key = label[2:-1] if label.startswith("V[") and label.endswith("]") else label
        if key.lower() not in lookup:
            raise GraphError(f"unknown response label {label!r}")
        return lookup[key.lower()]
    for prefix in ("V[", "Y[", "T["):
        if label.startswith(prefix) and label.endswith("]"):
            name = lookup.get(label[2:-1].lower())
            if name is None:
                raise GraphError(f"unknown response label {label!r}")
            resolved = latent(name) if prefix == "V[" else observable(name)
            if prefix != "V[" and resolved != f"{prefix}{name}]":
                raise GraphError(f"{label!r}: observable for {name} is {observable(name)}")
            return resolved
    raise GraphError(f"extended labels must look like V[Math], Y[Math] or T[Geom]; got {label!r}")


def dot_undirected(graph: UndirectedGraph, labels: Mapping[frozenset, float] | None = None,
                   name: str = "G") -> str:
    lines = [f"graph {name} {{", "  node [shape=circle];"]
    for v in graph.vertices:
        lines.append(f'  "{v}";')
    for a, b in graph.sorted_edges():
        attr = ""
        if labels is not None and frozenset((a, b)) in labels:
            attr = f' [label="{labels[frozenset((a, b))]:.3f}"]'
        lines.append(f'  "{a}" -- "{b}"{attr};')
    lines.append("}")
    return "\n".join(lines) + "\n"


def dot_extended(extended: ExtendedGraph, name: str = "G") -> str:
    lines = [f"digraph {name} {{"]
    for v in extended.vertices:
        shape = "circle" if v in extended.latent_vertices else "box"
        lines.append(f'  "{v}" [shape={shape}];')
    for a, b in extended.latent_subgraph.sorted_edges():
        lines.append(f'  "{a}" -> "{b}" [dir=none];')
    for a, b in extended.directed_edges:
        lines.append(f'  "{a}" -> "{b}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
