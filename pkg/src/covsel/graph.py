"""Directed acyclic graphs, d-separation and adjustment-set criteria."""

from __future__ import annotations

import heapq
import re
from collections import deque
from typing import Iterable, Iterator

NodeSet = frozenset


class GraphError(ValueError):
    """Raised for malformed graphs or queries on unknown nodes."""


class CycleError(GraphError):
    pass


class AssumptionError(GraphError):
    """The graph violates a structural assumption required by a query."""


_DIGITS = re.compile(r"(\d+)")


def node_key(name: str):
    """Sort key ordering ``Z2`` before ``Z10``; used for every deterministic listing."""
    return tuple(int(tok) if tok.isdigit() else tok for tok in _DIGITS.split(name))


def sorted_nodes(nodes: Iterable[str]) -> list[str]:
    return sorted(nodes, key=node_key)


class Dag:
    """Immutable DAG over string-named nodes.

    Parameters
    ----------
    nodes : iterable of str
        Node identifiers. Order is kept as given; nodes that only appear in
        ``edges`` are appended in first-seen order.
    edges : iterable of (parent, child) pairs
    """

    def __init__(self, nodes: Iterable[str] = (), edges: Iterable[tuple[str, str]] = ()):
        order: list[str] = []
        seen: set[str] = set()
        for v in nodes:
            if v in seen:
                raise GraphError(f"duplicate node {v!r}")
            seen.add(v)
            order.append(v)
        edge_list: list[tuple[str, str]] = []
        edge_set: set[tuple[str, str]] = set()
        for u, v in edges:
            if u == v:
                raise GraphError(f"self-loop on {u!r}")
            if (u, v) in edge_set:
                raise GraphError(f"duplicate edge {u} -> {v}")
            for w in (u, v):
                if w not in seen:
                    seen.add(w)
                    order.append(w)
            edge_set.add((u, v))
            edge_list.append((u, v))

        self._nodes = tuple(order)
        self._edges = frozenset(edge_set)
        self._pa: dict[str, set[str]] = {v: set() for v in order}
        self._ch: dict[str, set[str]] = {v: set() for v in order}
        for u, v in edge_list:
            self._pa[v].add(u)
            self._ch[u].add(v)
        self._topo = self._toposort()

    def _toposort(self) -> tuple[str, ...]:
        indeg = {v: len(self._pa[v]) for v in self._nodes}
        heap = [(node_key(v), v) for v in self._nodes if indeg[v] == 0]
        heapq.heapify(heap)
        out = []
        while heap:
            _, v = heapq.heappop(heap)
            out.append(v)
            for c in self._ch[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, (node_key(c), c))
        if len(out) != len(self._nodes):
            stuck = sorted_nodes(v for v in self._nodes if indeg[v] > 0)
            raise CycleError(f"graph has a directed cycle through {stuck}")
        return tuple(out)

    @property
    def nodes(self) -> tuple[str, ...]:
        return self._nodes

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return self._edges

    def topological_order(self) -> tuple[str, ...]:
        """Topological order; ties resolved by natural node ordering."""
        return self._topo

    def __contains__(self, v: object) -> bool:
        return v in self._pa

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dag):
            return NotImplemented
        return set(self._nodes) == set(other._nodes) and self._edges == other._edges

    def __hash__(self) -> int:
        return hash((frozenset(self._nodes), self._edges))

    def __repr__(self) -> str:
        return f"Dag(nodes={len(self._nodes)}, edges={len(self._edges)})"

    def check(self, *vs: str) -> None:
        for v in vs:
            if v not in self._pa:
                raise GraphError(f"unknown node {v!r}")

    def parents(self, v: str) -> NodeSet:
        self.check(v)
        return frozenset(self._pa[v])

    def children(self, v: str) -> NodeSet:
        self.check(v)
        return frozenset(self._ch[v])

    def _closure(self, v: str, step: dict[str, set[str]]) -> NodeSet:
        self.check(v)
        out: set[str] = set()
        stack = [v]
        while stack:
            for w in step[stack.pop()]:
                if w not in out:
                    out.add(w)
                    stack.append(w)
        out.discard(v)
        return frozenset(out)

    def descendants(self, v: str) -> NodeSet:
        """Nodes reachable from ``v`` along directed edges, ``v`` excluded."""
        return self._closure(v, self._ch)

    def ancestors(self, v: str) -> NodeSet:
        """Nodes with a directed path into ``v``, ``v`` excluded."""
        return self._closure(v, self._pa)

    def remove_edges(self, edges: Iterable[tuple[str, str]]) -> "Dag":
        drop = set(edges)
        return Dag(self._nodes, sorted(self._edges - drop, key=lambda e: (node_key(e[0]), node_key(e[1]))))

    def sorted_edges(self) -> list[tuple[str, str]]:
        pos = {v: i for i, v in enumerate(self._topo)}
        return sorted(self._edges, key=lambda e: (pos[e[1]], node_key(e[0])))


def parents(g: Dag, v: str) -> NodeSet:
    return g.parents(v)


def children(g: Dag, v: str) -> NodeSet:
    return g.children(v)


def descendants(g: Dag, v: str) -> NodeSet:
    return g.descendants(v)


def ancestors(g: Dag, v: str) -> NodeSet:
    return g.ancestors(v)


def _reachable(g: Dag, source: str, cond: frozenset[str]) -> set[str]:
    """Nodes d-connected to ``source`` given ``cond`` (Bayes-ball traversal).

    Each visit is a (node, direction) pair where ``up`` means the node was
    entered from one of its children and ``down`` from one of its parents.
    """
    # ancestors of the conditioning set (inclusive) decide which colliders open
    anc_cond: set[str] = set(cond)
    stack = list(cond)
    while stack:
        for p in g._pa[stack.pop()]:
            if p not in anc_cond:
                anc_cond.add(p)
                stack.append(p)

    reached: set[str] = set()
    visited: set[tuple[str, bool]] = set()
    queue: deque[tuple[str, bool]] = deque([(source, True)])
    while queue:
        v, up = queue.popleft()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v not in cond:
            reached.add(v)
        if up and v not in cond:
            for p in g._pa[v]:
                queue.append((p, True))
            for c in g._ch[v]:
                queue.append((c, False))
        elif not up:
            if v not in cond:
                for c in g._ch[v]:
                    queue.append((c, False))
            if v in anc_cond:
                for p in g._pa[v]:
                    queue.append((p, True))
    reached.discard(source)
    return reached


def d_separated(g: Dag, a: str, b: str, cond: Iterable[str] = ()) -> bool:
    """True iff every path between ``a`` and ``b`` is blocked by ``cond``."""
    cond = frozenset(cond)
    g.check(a, b, *cond)
    if a == b:
        raise GraphError("d_separated needs two distinct nodes")
    if a in cond or b in cond:
        raise GraphError("endpoints may not be in the conditioning set")
    return b not in _reachable(g, a, cond)


def d_connected_set(g: Dag, a: str, cond: Iterable[str] = ()) -> NodeSet:
    """All nodes d-connected to ``a`` given ``cond``."""
    cond = frozenset(cond)
    g.check(a, *cond)
    return frozenset(_reachable(g, a, cond))


def d_adjacent(g: Dag, u: str, v: str, z: Iterable[str]) -> bool:
    """True iff some path between ``u`` and ``v`` is open given ``z`` minus the endpoints.

    ``z`` is the observed set the pair is considered within; pass the
    treatment inside ``z`` when it should block.
    """
    if u == v:
        raise GraphError("d_adjacent needs two distinct nodes")
    block = frozenset(z) - {u, v}
    return not d_separated(g, u, v, block)


def predictors_of(g: Dag, y: str, x: str, z: Iterable[str], include_treatment: bool = False) -> NodeSet:
    """Covariates W in ``z`` not d-separated from ``y`` given ``{x} | z - {W}``.

    With ``include_treatment`` the treatment is tested the same way and
    included in the result when it qualifies.
    """
    z = frozenset(z)
    if y in z or x in z:
        raise GraphError("treatment and outcome must not be in the covariate set")
    scope = z | {x}
    candidates = scope if include_treatment else z
    return frozenset(w for w in candidates if not d_separated(g, w, y, scope - {w}))


def is_valid_adjustment(g: Dag, x: str, y: str, z: Iterable[str]) -> bool:
    """Back-door check: ``z`` has no descendant of ``x`` and blocks every back-door path."""
    z = frozenset(z)
    g.check(x, y, *z)
    if x in z or y in z:
        raise GraphError("treatment and outcome must not be in the adjustment set")
    if z & g.descendants(x):
        return False
    cut = g.remove_edges((x, c) for c in g.children(x))
    return d_separated(cut, x, y, z)


def optimal_adjustment(g: Dag, x: str, y: str, covariates: Iterable[str] | None = None) -> NodeSet:
    """Parents of ``y`` other than ``x``.

    This is the minimum-variance valid adjustment set when every covariate
    is a non-descendant of ``x`` and ``y``; a violation raises
    :class:`AssumptionError`.
    """
    g.check(x, y)
    universe = frozenset(covariates) if covariates is not None else frozenset(g.nodes) - {x, y}
    g.check(*universe)
    bad = universe & (g.descendants(x) | g.descendants(y))
    if bad:
        raise AssumptionError(f"covariates {sorted_nodes(bad)} are descendants of {x} or {y}")
    return g.parents(y) - {x}


# --- edge-list text format -------------------------------------------------

_EDGE = re.compile(r"^(\S+)\s*->\s*(\S+)(?:\s+(\S+))?$")


def iter_edge_lines(text: str) -> Iterator[tuple[int, str]]:
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_edge_line(line: str, lineno: int = 0) -> tuple[str, str, float | None] | str:
    """Parse ``a -> b [w]`` into a triple, or a bare node name into a string."""
    m = _EDGE.match(line)
    if m:
        u, v, w = m.groups()
        if w is None:
            return u, v, None
        try:
            return u, v, float(w)
        except ValueError:
            raise GraphError(f"line {lineno}: bad weight {w!r}") from None
    if re.fullmatch(r"[^\s\-<>]+", line):
        return line
    raise GraphError(f"line {lineno}: cannot parse {line!r}")


def parse_edge_list(text: str) -> tuple[Dag, dict[tuple[str, str], float]]:
    """Parse the edge-list format; returns the graph and any edge weights given.

    One ``parent -> child [weight]`` per line, ``#`` starts a comment and a
    bare name on its own line declares an isolated node.
    """
    nodes: list[str] = []
    edges: list[tuple[str, str]] = []
    weights: dict[tuple[str, str], float] = {}
    for lineno, line in iter_edge_lines(text):
        item = parse_edge_line(line, lineno)
        if isinstance(item, str):
            nodes.append(item)
            continue
        u, v, w = item
        edges.append((u, v))
        if w is not None:
            weights[(u, v)] = w
    declared = list(dict.fromkeys(nodes))
    return Dag(declared, edges), weights


def read_edge_list(path) -> tuple[Dag, dict[tuple[str, str], float]]:
    with open(path) as fh:
        return parse_edge_list(fh.read())


def format_edge_list(g: Dag, weights: dict[tuple[str, str], float] | None = None) -> str:
    lines = []
    touched = {v for e in g.edges for v in e}
    for v in g.topological_order():
        if v not in touched:
            lines.append(v)
    for u, v in g.sorted_edges():
        if weights and (u, v) in weights:
            lines.append(f"{u} -> {v} {weights[(u, v)]!r}")
        else:
            lines.append(f"{u} -> {v}")
    return "\n".join(lines) + "\n"
