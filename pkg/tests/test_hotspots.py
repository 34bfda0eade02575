import numpy as np
import pytest

from routeflow.bundling import BundleHierarchy, BundlingParams
from routeflow.core import ControlPolyline
from routeflow.errors import CyclicGraph
from routeflow.hotspots import (
    CONVERGENCE,
    DIVERGENCE,
    Edge,
    HotspotGraph,
    Node,
    extract_hotspots,
    is_reverse_topological,
    layout_order,
)


def hierarchy(paths: dict[str, np.ndarray]) -> BundleHierarchy:
    final = {k: ControlPolyline(k, v, v) for k, v in paths.items()}
    return BundleHierarchy([], final, {}, {k: 1 for k in paths}, BundlingParams())


def xs(C):
    return np.linspace(0.05, 0.95, C)


def test_shared_middle_third():
    C = 9
    x = xs(C)
    a = np.c_[x, np.where((x > 0.3) & (x < 0.7), 0.5, 0.3)]
    b = np.c_[x, np.where((x > 0.3) & (x < 0.7), 0.5, 0.7)]
    g = extract_hotspots(hierarchy({"a": a, "b": b}))
    kinds = sorted(h.kind for h in g.hotspots.values())
    assert kinds == [CONVERGENCE, DIVERGENCE]
    conv = next(h for h in g.hotspots.values() if h.kind == CONVERGENCE)
    div = next(h for h in g.hotspots.values() if h.kind == DIVERGENCE)
    assert len(g.in_edges[conv.id]) == 2 and len(g.out_edges[conv.id]) == 1
    assert len(g.in_edges[div.id]) == 1 and len(g.out_edges[div.id]) == 2
    assert g.edges[g.out_edges[conv.id][0]].head == div.id
    assert sum(n.role == "source" for n in g.nodes.values()) == 2
    assert sum(n.role == "sink" for n in g.nodes.values()) == 2


def test_no_sharing_no_hotspots():
    C = 8
    x = xs(C)
    g = extract_hotspots(hierarchy({"a": np.c_[x, np.full(C, 0.2)], "b": np.c_[x, np.full(C, 0.8)]}))
    assert not g.hotspots
    assert all(g.nodes[e.tail].role == "source" and g.nodes[e.head].role == "sink" for e in g.edges.values())


def test_nested_joins_give_serial_convergences():
    C = 11
    x = xs(C)
    i = np.arange(C)
    a = np.c_[x, np.where((i >= 2) & (i <= 8), 0.5, 0.2)]
    b = np.c_[x, np.where((i >= 2) & (i <= 8), 0.5, 0.8)]
    c = np.c_[x, np.where((i >= 5) & (i <= 8), 0.5, 0.95)]
    g = extract_hotspots(hierarchy({"a": a, "b": b, "c": c}))
    convs = [h for h in g.hotspots.values() if h.kind == CONVERGENCE]
    assert len(convs) == 2
    first, second = sorted(convs, key=lambda h: h.position[0])
    assert any(g.edges[e].head == second.id for e in g.out_edges[first.id])


# ---------------------------------------------------------------- ordering


def graph(links):
    names = sorted({n for l in links for n in l})
    nodes = {n: Node(n, "hotspot", np.zeros(2)) for n in names}
    edges = {
        f"e{i}": Edge(f"e{i}", t, h, frozenset({"o"}), np.zeros((2, 2))) for i, (t, h) in enumerate(links)
    }
    return HotspotGraph(nodes, edges, {}, {})


def test_chain_reversed():
    assert layout_order(graph([("A", "B"), ("B", "C")])).nodes == ("C", "B", "A")


def test_two_chains_each_reversed():
    g = graph([("A", "B"), ("C", "D")])
    order = layout_order(g).nodes
    assert order.index("B") < order.index("A") and order.index("D") < order.index("C")
    assert order == layout_order(g).nodes
    assert is_reverse_topological(g, layout_order(g))


def test_diamond():
    assert layout_order(graph([("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])).nodes == ("D", "B", "C", "A")


def test_cycle_rejected():
    with pytest.raises(CyclicGraph) as info:
        graph([("A", "B"), ("B", "C"), ("C", "A")])
    assert info.value.nodes == ["A", "B", "C"]


# ---------------------------------------------------------------- on pipeline output


def test_graph_invariants(standard_runs):
    for _, _, r in standard_runs:
        g = r.graph
        for nid in g.hotspots:
            inc = set().union(*(g.edges[e].members for e in g.in_edges[nid]))
            out = set().union(*(g.edges[e].members for e in g.out_edges[nid]))
            assert inc == out
        for oid in g.object_ids:
            seq = g.node_sequence(oid)
            assert seq[0] == f"src:{oid}" and seq[-1] == f"snk:{oid}"
            for a, b in zip(g.routes[oid], g.routes[oid][1:]):
                assert g.edges[a].head == g.edges[b].tail
            assert all(oid in g.edges[e].members for e in g.routes[oid])
        assert is_reverse_topological(g, layout_order(g))


def test_extraction_repeatable(standard_runs):
    _, _, r = standard_runs[0]
    again = extract_hotspots(r.hierarchy)
    assert again.to_dot() == r.graph.to_dot()
    for eid, e in r.graph.edges.items():
        assert np.array_equal(again.edges[eid].geometry, e.geometry)
        assert again.edges[eid].members == e.members
