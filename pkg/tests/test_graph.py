import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from titan.errors import DomainError, ParseError
from titan.graph import (
    GRAPH_KINDS,
    DirectedGraph,
    diameter,
    generate_graph,
    honest_components,
    incidence_matrix,
    is_strongly_connected,
    parse_graph,
    weak_vertex_connectivity,
    weak_vertex_connectivity_bruteforce,
)


@st.composite
def digraphs(draw, max_m=7):
    m = draw(st.integers(1, max_m))
    pairs = [(i, j) for i in range(1, m + 1) for j in range(1, m + 1) if i != j]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return DirectedGraph(m, tuple(edges))


def test_ring_facts():
    g = generate_graph("ring", 100)
    assert is_strongly_connected(g)
    assert diameter(g) == 99
    assert weak_vertex_connectivity(g) == 2


def test_small_named_graphs():
    assert diameter(generate_graph("complete", 6)) == 1
    assert weak_vertex_connectivity(generate_graph("complete", 6)) == 5
    star = generate_graph("star", 6)
    assert diameter(star) == 2 and weak_vertex_connectivity(star) == 1
    assert honest_components(star, {1}) == [frozenset({i}) for i in range(2, 7)]
    assert diameter(generate_graph("path", 5)) == 4
    assert diameter(generate_graph("bidirectional-ring", 6)) == 3
    assert generate_graph("ring", 1).edges == ()


def test_not_strongly_connected():
    g = DirectedGraph(3, ((1, 2), (2, 3)))
    assert not is_strongly_connected(g)
    with pytest.raises(DomainError):
        diameter(g)


def test_validation():
    with pytest.raises(DomainError):
        DirectedGraph(3, ((1, 1),))
    with pytest.raises(DomainError):
        DirectedGraph(3, ((1, 2), (1, 2)))
    with pytest.raises(DomainError):
        DirectedGraph(3, ((1, 4),))
    with pytest.raises(DomainError):
        DirectedGraph(0, ())
    with pytest.raises(DomainError):
        generate_graph("torus", 4)
    with pytest.raises(DomainError):
        generate_graph("ring", 3).in_neighbors(4)


def test_parse_round_trip_and_errors():
    text = "# a ring\n3\n1 2\n\n2 3  # tail\n3 1\n"
    g = parse_graph(text)
    assert g.m == 3 and g.edges == ((1, 2), (2, 3), (3, 1))
    assert parse_graph(g.to_text()) == g
    for bad, line in [("3\n1 1\n", 2), ("3\n1 2\n1 2\n", 3), ("3\n1 5\n", 2), ("x\n", 1), ("3\n1 2 3\n", 2)]:
        with pytest.raises(ParseError, match=f"line {line}"):
            parse_graph(bad)
    with pytest.raises(ParseError):
        parse_graph("# nothing\n")


def test_incidence_matrix_columns_sum_to_zero():
    g = generate_graph("ring-plus-chords", 6, seed=2, chords=4)
    B = incidence_matrix(g)
    assert B.shape == (6, len(g.edges))
    assert np.all(B.sum(axis=0) == 0)


@given(digraphs())
def test_connectivity_matches_bruteforce(g):
    assert weak_vertex_connectivity(g) == weak_vertex_connectivity_bruteforce(g)


@given(digraphs())
def test_strong_connectivity_matches_networkx(g):
    ng = nx.DiGraph()
    ng.add_nodes_from(g.nodes)
    ng.add_edges_from(g.edges)
    assert is_strongly_connected(g) == nx.is_strongly_connected(ng)
    if is_strongly_connected(g) and g.m > 1:
        assert diameter(g) == nx.diameter(ng)


@given(digraphs(), st.data())
def test_honest_components_partition_the_honest_nodes(g, data):
    corrupted = set(data.draw(st.lists(st.integers(1, g.m), unique=True, max_size=g.m)))
    comps = honest_components(g, corrupted)
    covered = [v for c in comps for v in c]
    assert sorted(covered) == [v for v in g.nodes if v not in corrupted]
    if weak_vertex_connectivity(g) > len(corrupted) and len(corrupted) < g.m:
        assert len(comps) == 1


@given(st.sampled_from(GRAPH_KINDS), st.integers(2, 20), st.integers(0, 10), st.integers(0, 30))
def test_generators_are_deterministic_and_strong(kind, m, seed, chords):
    g = generate_graph(kind, m, seed, chords)
    assert g == generate_graph(kind, m, seed, chords)
    assert is_strongly_connected(g)
