"""Keyframe timing: scan-line node times, speed-ratio adjustment, easing, frames.

Times live on graph nodes. A node's time is shared by every object passing
through it, so groups reach and leave hotspots together by construction.
Keypoints between two nodes are timed by arc length, which gives every
non-dwell segment of an edge the same speed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .hotspots import HotspotGraph
from .layout import LayoutPlan

DWELL_EPS = 1e-9


class TimingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Keypoint:
    position: np.ndarray
    time: float
    node_id: str | None = None
    edge_id: str | None = None  # edge the following segment belongs to


@dataclass
class KeyframedPath:
    object_id: str
    keypoints: list[Keypoint]

    def times(self) -> np.ndarray:
        return np.array([k.time for k in self.keypoints])

    def positions(self) -> np.ndarray:
        return np.array([k.position for k in self.keypoints])

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.times()) >= 0))


@dataclass
class FrameSet:
    ids: list[str]
    times: np.ndarray
    positions: np.ndarray  # (frames, objects, 2)
    radius: float = 0.0
    groups: list[list[str]] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.times)

    def frame(self, k: int) -> dict[str, np.ndarray]:
        return {oid: self.positions[k, i] for i, oid in enumerate(self.ids)}


@dataclass(frozen=True)
class SpeedResult:
    paths: list[KeyframedPath]
    ratio: float
    initial_ratio: float
    iterations: int
    converged: bool


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


# ---------------------------------------------------------------- scan line


def scan_direction(g: HotspotGraph) -> np.ndarray:
    starts = np.array([n.position for n in g.nodes.values() if n.role == "source"])
    ends = np.array([n.position for n in g.nodes.values() if n.role == "sink"])
    d = ends.mean(axis=0) - starts.mean(axis=0) if len(starts) and len(ends) else np.zeros(2)
    n = np.linalg.norm(d)
    if n < 1e-12:
        warnings.warn("start and end centroids coincide; scanning along +x", TimingWarning)
        return np.array([1.0, 0.0])
    return d / n


def scanline_times(g: HotspotGraph, plan: LayoutPlan | None = None) -> dict[str, float]:
    """Projection of every node onto the scan direction, min-max normalized."""
    if not g.nodes:
        raise ValueError("graph has no nodes")
    d = scan_direction(g)
    ids = sorted(g.nodes)
    raw = np.array([g.nodes[n].position @ d for n in ids])
    lo, hi = raw.min(), raw.max()
    if hi - lo < 1e-15:
        warnings.warn("all nodes project to one scan position; using t=0.5", TimingWarning)
        return {n: 0.5 for n in ids}
    return {n: float(v) for n, v in zip(ids, (raw - lo) / (hi - lo))}


def repair_monotone(g: HotspotGraph, times: dict[str, float]) -> dict[str, float]:
    """Push node times forward so every edge takes positive time, then rescale.

    An edge whose head projects behind its tail gets half the median pace
    (time per unit length) of the well-ordered edges.
    """
    paces = []
    for e in g.edges.values():
        L = e.length()
        dt = times[e.head] - times[e.tail]
        if L > DWELL_EPS and dt > 0:
            paces.append(dt / L)
    pace = 0.5 * float(np.median(paces)) if paces else 1.0
    out = dict(times)
    for nid in _topological(g):
        for eid in g.in_edges[nid]:
            e = g.edges[eid]
            L = e.length()
            need = out[e.tail] + (pace * L if L > DWELL_EPS else 0.0)
            if out[nid] < need:
                out[nid] = need
    return _renormalize(out)


def _topological(g: HotspotGraph) -> list[str]:
    indeg = {n: len(g.in_edges[n]) for n in g.nodes}
    ready = sorted(n for n, d in indeg.items() if d == 0)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        new = []
        for eid in g.out_edges[n]:
            h = g.edges[eid].head
            indeg[h] -= 1
            if indeg[h] == 0:
                new.append(h)
        ready = sorted(ready + new)
    return order


def _renormalize(times: dict[str, float]) -> dict[str, float]:
    vals = np.array(list(times.values()))
    lo, hi = vals.min(), vals.max()
    if hi - lo < 1e-15:
        return {n: 0.5 for n in times}
    return {n: (t - lo) / (hi - lo) for n, t in times.items()}


DEPART = "/out"
DEFAULT_DWELL = 0.02


def departure_id(node_id: str) -> str:
    return node_id + DEPART


def add_dwell(times: dict[str, float], nodes, dwell: float = DEFAULT_DWELL) -> dict[str, float]:
    """Hold objects at the given nodes for a while, then rescale to [0,1].

    Every time is pushed back by one dwell per dwell node that comes before
    it, so the order of all times is kept. A dwell node gains a departure
    time one dwell after its arrival.
    """
    nodes = sorted(set(nodes) & set(times))
    if not nodes or dwell <= 0:
        return dict(times)
    starts = np.sort(np.array([times[n] for n in nodes]))
    out = {}
    for n, t in times.items():
        out[n] = t + dwell * int(np.searchsorted(starts, t, side="left"))
    for n in nodes:
        out[departure_id(n)] = out[n] + dwell
    return _renormalize(out)


def _departure(times: dict[str, float], node_id: str) -> tuple[str, float]:
    dep = departure_id(node_id)
    if dep in times:
        return dep, times[dep]
    return node_id, times[node_id]


# ---------------------------------------------------------------- keyframes


def build_paths(g: HotspotGraph, node_times: dict[str, float]) -> list[KeyframedPath]:
    """Keypoints at every edge geometry point, timed by arc length between nodes.

    A node with a departure time (see add_dwell) gets two keypoints at the
    same place: arrival, then departure.
    """
    paths = []
    for oid in g.object_ids:
        kps: list[Keypoint] = []
        for eid in g.routes[oid]:
            e = g.edges[eid]
            dep_id, t0 = _departure(node_times, e.tail)
            t1 = node_times[e.head]
            if dep_id != e.tail:
                kps.append(Keypoint(e.geometry[0].copy(), float(node_times[e.tail]), e.tail, None))
            cum = _arc(e.geometry)
            frac = cum / cum[-1] if cum[-1] > DWELL_EPS else np.linspace(0.0, 1.0, len(cum))
            for k in range(len(e.geometry) - 1):
                t = t0 if k == 0 else t0 + frac[k] * (t1 - t0)
                kps.append(Keypoint(e.geometry[k].copy(), float(t), dep_id if k == 0 else None, eid))
        last = g.edges[g.routes[oid][-1]]
        kps.append(Keypoint(last.geometry[-1].copy(), float(node_times[last.head]), last.head, None))
        paths.append(KeyframedPath(oid, kps))
    return paths


def _arc(pts: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])


@dataclass
class _Spans:
    """Node-to-node spans of all paths with their lengths and order constraints."""

    nodes: list[str]
    tail: np.ndarray
    head: np.ndarray
    length: np.ndarray
    preds: list[list[int]]
    succs: list[list[int]]


def _spans(paths: list[KeyframedPath]) -> _Spans:
    index: dict[str, int] = {}
    seen = {}
    for p in paths:
        anchors = [(k, kp) for k, kp in enumerate(p.keypoints) if kp.node_id is not None]
        pos = p.positions()
        seg = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pos, axis=0), axis=1))])
        for (ka, a), (kb, b) in zip(anchors, anchors[1:]):
            ia = index.setdefault(a.node_id, len(index))
            ib = index.setdefault(b.node_id, len(index))
            L = float(seg[kb] - seg[ka])
            seen.setdefault((ia, ib, L), None)
        for _, kp in anchors:
            index.setdefault(kp.node_id, len(index))
    keys = list(seen)
    nodes = [None] * len(index)
    for n, i in index.items():
        nodes[i] = n
    preds = [[] for _ in nodes]
    succs = [[] for _ in nodes]
    for a, b, _ in keys:
        succs[a].append(b)
        preds[b].append(a)
    return _Spans(
        nodes,
        np.array([k[0] for k in keys], dtype=np.int64),
        np.array([k[1] for k in keys], dtype=np.int64),
        np.array([k[2] for k in keys]),
        preds,
        succs,
    )


def _companions(sp: _Spans) -> tuple[list[list[int]], list[list[int]]]:
    """Nodes that move together with each node, with and without followers.

    Nodes joined by a zero-length span (arrival and departure of a dwell)
    form one core block. Sources and sinks that hang off a single block
    follow it, so their own span keeps its duration.
    """
    n = len(sp.nodes)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t, h, L in zip(sp.tail, sp.head, sp.length):
        if L <= DWELL_EPS:
            ra, rb = find(int(t)), find(int(h))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    size: dict[int, int] = {}
    for i in range(n):
        size[find(i)] = size.get(find(i), 0) + 1
    core: dict[int, list[int]] = {}
    for i in range(n):
        core.setdefault(find(i), []).append(i)
    core_of = [sorted(core[find(i)]) for i in range(n)]
    for i in range(n):
        if sp.preds[i] and sp.succs[i] or size[find(i)] > 1:
            continue
        roots = {find(q) for q in sp.preds[i] + sp.succs[i]}
        if len(roots) == 1:
            parent[i] = roots.pop()
    blocks: dict[int, list[int]] = {}
    for i in range(n):
        blocks.setdefault(find(i), []).append(i)
    return [sorted(blocks[find(i)]) for i in range(n)], core_of


def _pace_leaves(sp: _Spans, T: np.ndarray) -> None:
    """Retime private sources and sinks to the median interior speed.

    A source or sink has exactly one span and no other constraint, so its
    time can be set freely inside [0,1] before the adjustment loop starts.
    """
    moving = sp.length > DWELL_EPS
    leaf_span = {}
    for k in np.flatnonzero(moving):
        a, b = int(sp.tail[k]), int(sp.head[k])
        if not sp.preds[a] and len(sp.succs[a]) == 1:
            leaf_span[a] = (k, b, -1.0)
        if not sp.succs[b] and len(sp.preds[b]) == 1:
            leaf_span[b] = (k, a, 1.0)
    inner = [k for k in np.flatnonzero(moving) if int(sp.tail[k]) not in leaf_span and int(sp.head[k]) not in leaf_span]
    speeds = _speeds(sp, T)
    pool = speeds if not inner else (sp.length[inner] / np.maximum(T[sp.head[inner]] - T[sp.tail[inner]], 1e-300))
    pool = pool[np.isfinite(pool)]
    if len(pool) == 0:
        return
    v = float(np.median(pool))
    for q, (k, hub, sign) in sorted(leaf_span.items()):
        T[q] = min(max(T[hub] + sign * sp.length[k] / v, 0.0), 1.0)


def _speeds(sp: _Spans, T: np.ndarray) -> np.ndarray:
    moving = sp.length > DWELL_EPS
    dt = T[sp.head[moving]] - T[sp.tail[moving]]
    with np.errstate(divide="ignore"):
        return np.where(dt > 0, sp.length[moving] / np.where(dt > 0, dt, 1.0), np.inf)


def speed_ratio(paths: list[KeyframedPath]) -> float:
    """max/min speed over all non-dwell keypoint segments of all paths."""
    speeds = []
    for p in paths:
        pos, t = p.positions(), p.times()
        dp = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        dt = np.diff(t)
        m = dp > DWELL_EPS
        with np.errstate(divide="ignore"):
            speeds.append(np.where(dt[m] > 0, dp[m] / np.where(dt[m] > 0, dt[m], 1.0), np.inf))
    s = np.concatenate(speeds) if speeds else np.array([])
    if len(s) == 0:
        return 1.0
    return float(s.max() / s.min()) if s.min() > 0 else np.inf


def _ratio(sp: _Spans, T: np.ndarray) -> float:
    s = _speeds(sp, T)
    if len(s) == 0:
        return 1.0
    return float(s.max() / s.min())


def enforce_speed_ratio(
    paths: list[KeyframedPath],
    max_iters: int = 1000,
    seed: int = 42,
    limit: float = 2.0,
    pace_leaves: bool = True,
) -> SpeedResult:
    """Random 10% delay/advance of the fastest span until max/min speed < limit.

    Node times move together for every path that shares the node. The best
    configuration seen is returned, so the ratio never ends above where it
    started. Times are rescaled to [0,1] at the end.
    """
    sp = _spans(paths)
    T = np.zeros(len(sp.nodes))
    node_idx = {n: i for i, n in enumerate(sp.nodes)}
    for p in paths:
        for kp in p.keypoints:
            if kp.node_id is not None:
                T[node_idx[kp.node_id]] = kp.time
    rng = np.random.default_rng(seed)
    moving = np.flatnonzero(sp.length > DWELL_EPS)
    companions, cores = _companions(sp)
    initial = _ratio(sp, T)
    best_T, best = T.copy(), initial
    if pace_leaves:
        _pace_leaves(sp, T)
        r = _ratio(sp, T)
        if r < best:
            best, best_T = r, T.copy()
    it = 0
    while best >= limit and it < max_iters and len(moving):
        it += 1
        speeds = _speeds(sp, T)
        k = moving[int(np.argmax(speeds))]
        a, b = sp.tail[k], sp.head[k]
        dt = T[b] - T[a]
        step = 0.1 * dt if dt > 0 else 1e-3
        options = ("delay", "advance") if rng.random() < 0.5 else ("advance", "delay")
        moved = False
        for opt in options:
            node = b if opt == "delay" else a
            other = a if opt == "delay" else b
            # followers come along unless they are pinned at 0 or 1; the
            # span's other end stays put even when it would normally follow
            for block in (companions[node], cores[node]):
                group = [q for q in block if q != other]
                room = _room(sp, T, group, opt == "delay")
                if room > 0:
                    T[group] += min(step, room) * (1.0 if opt == "delay" else -1.0)
                    moved = True
                    break
            if moved:
                break
        r = _ratio(sp, T)
        if r < best:
            best, best_T = r, T.copy()
    lo, hi = best_T.min(), best_T.max()
    final_T = (best_T - lo) / (hi - lo) if hi - lo > 1e-15 else np.full_like(best_T, 0.5)
    times = {n: float(final_T[i]) for n, i in node_idx.items()}
    return SpeedResult(_retime(paths, times), best, initial, it, best < limit)


def _room(sp: _Spans, T: np.ndarray, group: list[int], delay: bool) -> float:
    """How far a block of node times can move before leaving [0,1] or passing a neighbor."""
    inside = set(group)
    if delay:
        return min([1.0 - T[q] for q in group] + [T[s] - T[q] for q in group for s in sp.succs[q] if s not in inside])
    return min([T[q] for q in group] + [T[q] - T[s] for q in group for s in sp.preds[q] if s not in inside])


def _retime(paths: list[KeyframedPath], times: dict[str, float]) -> list[KeyframedPath]:
    out = []
    for p in paths:
        pos = p.positions()
        seg = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pos, axis=0), axis=1))])
        anchors = [k for k, kp in enumerate(p.keypoints) if kp.node_id is not None]
        new_t = np.zeros(len(p.keypoints))
        for ka, kb in zip(anchors, anchors[1:]):
            t0 = times[p.keypoints[ka].node_id]
            t1 = times[p.keypoints[kb].node_id]
            span = seg[kb] - seg[ka]
            for k in range(ka, kb):
                f = (seg[k] - seg[ka]) / span if span > DWELL_EPS else (k - ka) / (kb - ka)
                new_t[k] = t0 if k == ka else t0 + f * (t1 - t0)
        new_t[anchors[-1]] = times[p.keypoints[anchors[-1]].node_id]
        out.append(
            KeyframedPath(
                p.object_id,
                [Keypoint(kp.position, float(t), kp.node_id, kp.edge_id) for kp, t in zip(p.keypoints, new_t)],
            )
        )
    return out


# ---------------------------------------------------------------- sampling


def sample_frames(
    paths: list[KeyframedPath],
    frame_count: int = 240,
    easing: bool = True,
    plan: LayoutPlan | None = None,
) -> FrameSet:
    """Positions of every object on a uniform time grid over [0,1].

    Easing warps time inside each node-to-node span, so objects ease in and
    out of nodes rather than at every keypoint. With a plan, each object
    carries its in-transit offset, blended from the tail formation to the
    head formation across the edge.
    """
    if frame_count < 2:
        raise ValueError("frame_count must be at least 2")
    grid = np.linspace(0.0, 1.0, frame_count)
    ordered = sorted(paths, key=lambda p: p.object_id)
    out = np.zeros((frame_count, len(ordered), 2))
    for j, p in enumerate(ordered):
        out[:, j] = _sample_path(p, grid, easing, plan)
    return FrameSet([p.object_id for p in ordered], grid, out, plan.radius if plan else 0.0)


def _sample_path(p: KeyframedPath, grid: np.ndarray, easing: bool, plan: LayoutPlan | None) -> np.ndarray:
    kps = p.keypoints
    pos = p.positions()
    t = p.times()
    anchors = np.array([k for k, kp in enumerate(kps) if kp.node_id is not None])
    at = t[anchors]
    n_span = len(anchors) - 1
    off = np.zeros((n_span, 2))
    shift = np.zeros((n_span, 2))
    first_off = last_off = np.zeros(2)
    if plan is not None:
        for m in range(n_span):
            kp = kps[anchors[m]]
            if kp.edge_id is None:
                # dwell: rearrange from the arriving formation into the node layout
                off[m] = plan.arrivals[kp.node_id][p.object_id]
                shift[m] = off[m] - plan.layouts[kp.node_id].offsets[p.object_id]
            else:
                off[m] = plan.edge_offsets[kp.edge_id][p.object_id]
                shift[m] = plan.edge_shift[kp.edge_id]
        first_off = plan.layouts[kps[0].node_id].offsets[p.object_id]
        last_off = plan.layouts[kps[-1].node_id].offsets[p.object_id]

    m = np.clip(np.searchsorted(at, grid, side="right") - 1, 0, n_span - 1)
    T0, T1 = at[m], at[m + 1]
    span = T1 - T0
    s = np.where(span > 0, (grid - T0) / np.where(span > 0, span, 1.0), 1.0)
    w = smoothstep(s) if easing else np.clip(s, 0.0, 1.0)
    tw = T0 + w * span
    res = np.stack([np.interp(tw, t, pos[:, 0]), np.interp(tw, t, pos[:, 1])], axis=1)
    res += off[m] - w[:, None] * shift[m]
    before = grid <= t[0]
    after = grid >= t[-1]
    res[before] = pos[0] + first_off
    res[after] = pos[-1] + last_off
    return res

