"""Hotspot DAG extracted from the bundle hierarchy, plus its layout order.

Objects that share bit-identical control points at an index travel together
there. A maximal index run with a fixed member set is a *segment*; a segment
fed by two or more segments starts at a convergence, one that feeds two or
more ends at a divergence. Every object additionally gets a virtual source
(its first control point) and sink (its last one).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .bundling import BundleHierarchy
from .errors import CyclicGraph

CONVERGENCE = "convergence"
DIVERGENCE = "divergence"
TRANSFER = "transfer"


@dataclass
class Hotspot:
    id: str
    position: np.ndarray
    kind: str
    arriving_groups: list[frozenset[str]]
    departing_groups: list[frozenset[str]]
    time_slot: float | None = None

    @property
    def layout_kind(self) -> str:
        return CONVERGENCE if self.kind == CONVERGENCE else DIVERGENCE


@dataclass(frozen=True)
class Node:
    id: str
    role: str  # "source" | "sink" | "hotspot"
    position: np.ndarray
    object_id: str | None = None


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    members: frozenset[str]
    geometry: np.ndarray

    def direction_at_tail(self) -> np.ndarray:
        return _first_direction(self.geometry)

    def direction_at_head(self) -> np.ndarray:
        return _first_direction(self.geometry[::-1]) * -1.0

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.geometry, axis=0), axis=1).sum())


def _first_direction(geom: np.ndarray) -> np.ndarray:
    for p in geom[1:]:
        d = p - geom[0]
        n = np.linalg.norm(d)
        if n > 1e-12:
            return d / n
    return np.zeros(2)


@dataclass
class HotspotGraph:
    nodes: dict[str, Node]
    edges: dict[str, Edge]
    hotspots: dict[str, Hotspot]
    routes: dict[str, list[str]]  # object id -> ordered edge ids
    out_edges: dict[str, list[str]] = field(default_factory=dict)
    in_edges: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.out_edges = {n: [] for n in self.nodes}
        self.in_edges = {n: [] for n in self.nodes}
        for eid in sorted(self.edges):
            e = self.edges[eid]
            self.out_edges[e.tail].append(eid)
            self.in_edges[e.head].append(eid)
        cyc = _cycle_nodes(self)
        if cyc:
            raise CyclicGraph(cyc)

    @property
    def object_ids(self) -> list[str]:
        return sorted(self.routes)

    def node_sequence(self, oid: str) -> list[str]:
        route = self.routes[oid]
        return [self.edges[route[0]].tail] + [self.edges[e].head for e in route]

    def hotspot_itinerary(self, oid: str) -> tuple[str, ...]:
        return tuple(n for n in self.node_sequence(oid) if self.nodes[n].role == "hotspot")

    def to_dot(self) -> str:
        lines = ["digraph hotspots {"]
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            label = self.hotspots[nid].kind if nid in self.hotspots else node.role
            x, y = node.position
            lines.append(f'  "{nid}" [label="{nid}\\n{label}", pos="{x:.4f},{y:.4f}"];')
        for eid in sorted(self.edges):
            e = self.edges[eid]
            lines.append(f'  "{e.tail}" -> "{e.head}" [label="{eid} ({len(e.members)})"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _cycle_nodes(g: HotspotGraph) -> set[str]:
    indeg = {n: len(g.in_edges[n]) for n in g.nodes}
    queue = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while queue:
        n = queue.pop()
        seen += 1
        for eid in g.out_edges[n]:
            h = g.edges[eid].head
            indeg[h] -= 1
            if indeg[h] == 0:
                queue.append(h)
    return {n for n, d in indeg.items() if d > 0} if seen < len(g.nodes) else set()


# ---------------------------------------------------------------- extraction


def _segments(paths: np.ndarray):
    """Per object, its ordered list of (member set, first index, last index)."""
    O, C = paths.shape[0], paths.shape[1]
    classes = []  # per index: object -> frozenset of co-located objects
    for c in range(C):
        if c == 0 or c == C - 1:
            classes.append([frozenset([o]) for o in range(O)])
            continue
        groups: dict[bytes, list[int]] = {}
        for o in range(O):
            groups.setdefault(paths[o, c].tobytes(), []).append(o)
        cls = [None] * O
        for members in groups.values():
            fs = frozenset(members)
            for o in members:
                cls[o] = fs
        classes.append(cls)
    per_object = []
    for o in range(O):
        segs = []
        start = 0
        for c in range(1, C + 1):
            if c == C or classes[c][o] != classes[start][o]:
                segs.append((classes[start][o], start, c - 1))
                start = c
        per_object.append(segs)
    return per_object


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = sorted((ra, rb))
            self.parent[hi] = lo


def extract_hotspots(h: BundleHierarchy, unify_radius: float | None = None) -> HotspotGraph:
    ids = sorted(h.final_paths)
    paths = np.stack([h.final_paths[i].current for i in ids])
    C = paths.shape[1]
    radius = h.params.merge_delta if unify_radius is None else unify_radius
    per_object = _segments(paths)

    preds: dict[tuple, set] = {}
    succs: dict[tuple, set] = {}
    for segs in per_object:
        for a, b in zip(segs, segs[1:]):
            ka, kb = (a[0], a[1]), (b[0], b[1])
            succs.setdefault(ka, set()).add(kb)
            preds.setdefault(kb, set()).add(ka)

    # raw hotspot keys: ("conv", segment) at its first index, ("div", segment) at its last
    raw: dict[tuple, tuple[int, np.ndarray]] = {}
    for seg, ps in preds.items():
        if len(ps) >= 2:
            members, a = seg
            raw[("conv", seg)] = (a, paths[min(members), a])
    for seg, ss in succs.items():
        if len(ss) >= 2:
            members, a = seg
            b = next(s for s in per_object[min(members)] if (s[0], s[1]) == seg)[2]
            raw[("div", seg)] = (b, paths[min(members), b])

    def raw_sort_key(key):
        kind, (members, a) = key
        idx = raw[key][0]
        return (idx, 0 if kind == "conv" else 1, min(ids[m] for m in members))

    ordered = sorted(raw, key=raw_sort_key)
    raw_id = {key: f"h{n:03d}" for n, key in enumerate(ordered)}

    visits = []
    for o, segs in enumerate(per_object):
        seq = [(f"src:{ids[o]}", 0)]
        for members, a, b in segs:
            seg = (members, a)
            if ("conv", seg) in raw:
                seq.append((raw_id[("conv", seg)], a))
            if ("div", seg) in raw:
                seq.append((raw_id[("div", seg)], b))
        seq.append((f"snk:{ids[o]}", C - 1))
        visits.append(seq)

    positions = {raw_id[k]: v[1] for k, v in raw.items()}
    uf = _unify(visits, positions, radius)

    node_pos: dict[str, list[np.ndarray]] = {}
    for hid, p in positions.items():
        node_pos.setdefault(uf.find(hid), []).append(p)
    nodes: dict[str, Node] = {}
    for o, oid in enumerate(ids):
        nodes[f"src:{oid}"] = Node(f"src:{oid}", "source", paths[o, 0].copy(), oid)
        nodes[f"snk:{oid}"] = Node(f"snk:{oid}", "sink", paths[o, -1].copy(), oid)
    for hid, ps in node_pos.items():
        nodes[hid] = Node(hid, "hotspot", np.mean(ps, axis=0))

    edge_index: dict[tuple, dict] = {}
    routes_keys: dict[str, list[tuple]] = {}
    for o, seq in enumerate(visits):
        collapsed = []
        for nid, c in seq:
            rep = uf.find(nid) if nid in uf.parent else nid
            if collapsed and collapsed[-1][0] == rep:
                collapsed[-1][2] = c
            else:
                collapsed.append([rep, c, c])
        keys = []
        for (n1, _, i1), (n2, i2, _) in zip(collapsed, collapsed[1:]):
            geom = paths[o, i1 : i2 + 1].copy()
            if len(geom) == 1:
                geom = np.vstack([geom, geom])
            geom[0] = nodes[n1].position
            geom[-1] = nodes[n2].position
            key = (n1, n2, geom.tobytes())
            entry = edge_index.setdefault(key, {"members": set(), "geometry": geom})
            entry["members"].add(ids[o])
            keys.append(key)
        routes_keys[ids[o]] = keys

    ordered_keys = sorted(edge_index, key=lambda k: (k[0], k[1], min(edge_index[k]["members"])))
    edge_id = {k: f"e{n:04d}" for n, k in enumerate(ordered_keys)}
    edges = {
        edge_id[k]: Edge(edge_id[k], k[0], k[1], frozenset(v["members"]), v["geometry"])
        for k, v in edge_index.items()
    }
    routes = {oid: [edge_id[k] for k in keys] for oid, keys in routes_keys.items()}

    graph = HotspotGraph(nodes, edges, {}, routes)
    for nid, node in nodes.items():
        if node.role != "hotspot":
            continue
        arriving = [edges[e].members for e in graph.in_edges[nid]]
        departing = [edges[e].members for e in graph.out_edges[nid]]
        if len(arriving) > len(departing):
            kind = CONVERGENCE
        elif len(arriving) < len(departing):
            kind = DIVERGENCE
        else:
            kind = TRANSFER
        graph.hotspots[nid] = Hotspot(nid, node.position, kind, arriving, departing)
    return graph


def _unify(visits, positions: dict[str, np.ndarray], radius: float) -> _UnionFind:
    """Union hotspots closer than ``radius`` unless that would create a cycle."""
    hids = sorted(positions)
    uf = _UnionFind(hids)
    if radius <= 0 or len(hids) < 2:
        return uf
    pts = np.array([positions[h] for h in hids])
    pairs = []
    for i in range(len(hids)):
        d = np.linalg.norm(pts[i + 1 :] - pts[i], axis=1)
        for j in np.flatnonzero(d < radius):
            pairs.append((i, i + 1 + int(j)))
    if not pairs:
        return uf
    succ: dict[str, set] = {h: set() for h in hids}
    for seq in visits:
        hs = [n for n, _ in seq if n in positions]
        for a, b in zip(hs, hs[1:]):
            if a != b:
                succ[a].add(b)
    for i, j in pairs:
        a, b = uf.find(hids[i]), uf.find(hids[j])
        if a == b or _linked(succ, a, b) or _linked(succ, b, a):
            continue
        uf.union(a, b)
        keep, drop = sorted((a, b))
        succ[keep] |= succ.pop(drop)
        succ[keep] -= {keep, drop}
        for h, nxt in succ.items():
            if drop in nxt:
                nxt.discard(drop)
                if h != keep:
                    nxt.add(keep)
    return uf


def _linked(succ: dict[str, set], a: str, b: str) -> bool:
    """True if b is reachable from a through at least one other node.

    A direct edge alone only turns into a dropped self-loop when a and b are
    unified; a longer path would become a cycle.
    """
    stack = [n for n in succ[a] if n != b]
    seen = set(stack)
    while stack:
        n = stack.pop()
        for m in succ[n]:
            if m == b:
                return True
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return False


# ---------------------------------------------------------------- ordering


@dataclass(frozen=True)
class LayoutOrder:
    nodes: tuple[str, ...]


def layout_order(g: HotspotGraph) -> LayoutOrder:
    """Reverse topological order: sinks first, ties broken by ascending node id."""
    outdeg = {n: len(set(g.edges[e].head for e in g.out_edges[n])) for n in g.nodes}
    parents = {n: sorted(set(g.edges[e].tail for e in g.in_edges[n])) for n in g.nodes}
    heap = [n for n, d in outdeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for p in parents[n]:
            outdeg[p] -= 1
            if outdeg[p] == 0:
                heapq.heappush(heap, p)
    if len(order) < len(g.nodes):
        raise CyclicGraph(set(g.nodes) - set(order))
    return LayoutOrder(tuple(order))


def is_reverse_topological(g: HotspotGraph, order: LayoutOrder) -> bool:
    pos = {n: i for i, n in enumerate(order.nodes)}
    return len(pos) == len(g.nodes) and all(pos[e.head] < pos[e.tail] for e in g.edges.values())
