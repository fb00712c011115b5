"""Directed communication graphs and the connectivity measures the protocol
guarantees depend on.

Nodes are numbered ``1..m``.  The text format is the node count on the first
line followed by one directed edge ``i j`` per line; blank lines and ``#``
comments are ignored.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import networkx as nx
import numpy as np

from titan.errors import DomainError, ParseError

GRAPH_KINDS = ("ring", "bidirectional-ring", "ring-plus-chords", "complete", "star", "path")


@dataclass(frozen=True)
class DirectedGraph:
    m: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not (isinstance(self.m, (int, np.integer)) and self.m >= 1):
            raise DomainError(f"node count must be a positive integer, got {self.m!r}")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "edges", edges)
        seen = set()
        for i, j in edges:
            if i == j:
                raise DomainError(f"self-loop at node {i}")
            if not (1 <= i <= self.m and 1 <= j <= self.m):
                raise DomainError(f"edge ({i}, {j}) has an endpoint outside 1..{self.m}")
            if (i, j) in seen:
                raise DomainError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    @property
    def nodes(self) -> range:
        return range(1, self.m + 1)

    def _check_node(self, i: int) -> None:
        if not 1 <= i <= self.m:
            raise DomainError(f"node id {i} outside 1..{self.m}")

    @cached_property
    def _in(self) -> dict[int, frozenset[int]]:
        ins: dict[int, set[int]] = {v: set() for v in self.nodes}
        for i, j in self.edges:
            ins[j].add(i)
        return {v: frozenset(s) for v, s in ins.items()}

    @cached_property
    def _out(self) -> dict[int, frozenset[int]]:
        outs: dict[int, set[int]] = {v: set() for v in self.nodes}
        for i, j in self.edges:
            outs[i].add(j)
        return {v: frozenset(s) for v, s in outs.items()}

    def in_neighbors(self, i: int) -> frozenset[int]:
        self._check_node(i)
        return self._in[i]

    def out_neighbors(self, i: int) -> frozenset[int]:
        self._check_node(i)
        return self._out[i]

    def has_edge(self, i: int, j: int) -> bool:
        return 1 <= i <= self.m and j in self._out[i]

    def undirected_neighbors(self, i: int) -> frozenset[int]:
        return self.in_neighbors(i) | self.out_neighbors(i)

    def to_text(self) -> str:
        return "".join([f"{self.m}\n", *(f"{i} {j}\n" for i, j in self.edges)])


def _bfs(adj: dict[int, frozenset[int]], source: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def in_neighbors(g: DirectedGraph, i: int) -> frozenset[int]:
    return g.in_neighbors(i)


def out_neighbors(g: DirectedGraph, i: int) -> frozenset[int]:
    return g.out_neighbors(i)


def is_strongly_connected(g: DirectedGraph) -> bool:
    return len(_bfs(g._out, 1)) == g.m and len(_bfs(g._in, 1)) == g.m


def diameter(g: DirectedGraph) -> int:
    """Longest shortest directed path over all ordered node pairs."""
    best = 0
    for v in g.nodes:
        dist = _bfs(g._out, v)
        if len(dist) < g.m:
            raise DomainError("diameter is undefined for a graph that is not strongly connected")
        best = max(best, max(dist.values()))
    return best


def undirected(g: DirectedGraph) -> nx.Graph:
    ug = nx.Graph()
    ug.add_nodes_from(g.nodes)
    ug.add_edges_from(g.edges)
    return ug


def weak_vertex_connectivity(g: DirectedGraph) -> int:
    """Vertex connectivity of the symmetrised graph (max-flow / Menger cuts)."""
    if g.m < 2:
        return 0
    return int(nx.node_connectivity(undirected(g)))


def _connected_after_removal(g: DirectedGraph, removed: set[int]) -> bool:
    remaining = [v for v in g.nodes if v not in removed]
    if len(remaining) <= 1:
        return True
    seen = {remaining[0]}
    queue = deque([remaining[0]])
    while queue:
        u = queue.popleft()
        for v in g.undirected_neighbors(u):
            if v not in removed and v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(remaining)


def weak_vertex_connectivity_bruteforce(g: DirectedGraph) -> int:
    """Subset-deletion oracle; exponential, intended for m <= 8.

    Complete graphs have no separating set and get the conventional m - 1.
    """
    for size in range(g.m - 1):
        for removed in itertools.combinations(g.nodes, size):
            if not _connected_after_removal(g, set(removed)):
                return size
    return g.m - 1


def honest_components(g: DirectedGraph, corrupted) -> list[frozenset[int]]:
    """Connected components of the symmetrised graph after deleting ``corrupted``."""
    corrupted = set(corrupted)
    left = {v for v in g.nodes if v not in corrupted}
    comps = []
    while left:
        start = min(left)
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in g.undirected_neighbors(u):
                if v in left and v not in seen:
                    seen.add(v)
                    queue.append(v)
        comps.append(frozenset(seen))
        left -= seen
    return comps


def incidence_matrix(g: DirectedGraph) -> np.ndarray:
    """``B[j, e] = +1`` for the receiver and ``-1`` for the sender of edge ``e``."""
    B = np.zeros((g.m, len(g.edges)), dtype=np.int64)
    for e, (i, j) in enumerate(g.edges):
        B[i - 1, e] = -1
        B[j - 1, e] = 1
    return B


def parse_graph(text: str) -> DirectedGraph:
    m = None
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise ParseError(f"expected integers, got {line!r}", lineno) from None
        if m is None:
            if len(nums) != 1 or nums[0] < 1:
                raise ParseError("first line must be a positive node count", lineno)
            m = nums[0]
            continue
        if len(nums) != 2:
            raise ParseError(f"expected 'i j', got {line!r}", lineno)
        i, j = nums
        if i == j:
            raise ParseError(f"self-loop at node {i}", lineno)
        if not (1 <= i <= m and 1 <= j <= m):
            raise ParseError(f"edge ({i}, {j}) outside 1..{m}", lineno)
        if (i, j) in seen:
            raise ParseError(f"duplicate edge ({i}, {j})", lineno)
        seen.add((i, j))
        edges.append((i, j))
    if m is None:
        raise ParseError("empty graph file")
    return DirectedGraph(m, tuple(edges))


def load_graph(path) -> DirectedGraph:
    with open(path) as fh:
        return parse_graph(fh.read())


def generate_graph(kind: str, m: int, seed: int = 0, chords: int = 0) -> DirectedGraph:
    """Deterministic graph generators.

    ``ring-plus-chords`` lays a directed ring over a random node order and adds
    ``chords`` random extra edges, so the result is always strongly connected.
    ``star`` connects hub 1 to every leaf in both directions.
    """
    if m < 1:
        raise DomainError("m must be positive")
    if kind == "ring":
        edges = [(i, i % m + 1) for i in range(1, m + 1)] if m > 1 else []
    elif kind == "bidirectional-ring":
        edges = sorted({e for i in range(1, m + 1) for e in ((i, i % m + 1), (i % m + 1, i)) if m > 1 and e[0] != e[1]})
    elif kind == "complete":
        edges = [(i, j) for i in range(1, m + 1) for j in range(1, m + 1) if i != j]
    elif kind == "star":
        edges = [e for leaf in range(2, m + 1) for e in ((1, leaf), (leaf, 1))]
    elif kind == "path":
        edges = [e for i in range(1, m) for e in ((i, i + 1), (i + 1, i))]
    elif kind == "ring-plus-chords":
        rng = np.random.default_rng(seed)
        order = [int(v) for v in rng.permutation(np.arange(1, m + 1))]
        ring = [(order[t], order[(t + 1) % m]) for t in range(m)] if m > 1 else []
        present = set(ring)
        edges = list(dict.fromkeys(ring))
        candidates = [(i, j) for i in range(1, m + 1) for j in range(1, m + 1) if i != j and (i, j) not in present]
        if chords and candidates:
            picks = rng.choice(len(candidates), size=min(chords, len(candidates)), replace=False)
            edges += [candidates[int(p)] for p in sorted(picks)]
    else:
        raise DomainError(f"unknown graph kind {kind!r}; expected one of {GRAPH_KINDS}")
    return DirectedGraph(m, tuple(edges))
