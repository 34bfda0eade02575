"""Incremental circle packing of traveling groups at every graph node.

Nodes are visited sinks first. The formation of each outgoing edge is taken
from the node it leads to and treated as one rigid body, so a group that
splits later is already arranged for its split. Bodies are packed by a
translate-only force loop with penetration resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import linear_sum_assignment

from .hotspots import HotspotGraph, LayoutOrder

DEFAULT_RADIUS = 9 / 1250
# an arriving share of a layout is repacked once its enclosing radius passes
# this fraction of the 2r*sqrt(n) compactness bound
SHARE_SLACK = 0.75


@dataclass(frozen=True)
class ObjectDisc:
    object_id: str
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disc radius must be positive")


@dataclass(frozen=True)
class LayoutParams:
    radius: float = DEFAULT_RADIUS
    center_gain: float = 0.1
    neighbor_gain: float = 0.05
    max_iterations: int = 500
    tolerance: float = 1e-6


@dataclass(frozen=True)
class Unit:
    """A rigid body to pack: object ids with their offsets relative to each other."""

    ids: tuple[str, ...]
    offsets: np.ndarray

    @staticmethod
    def disc(oid: str) -> "Unit":
        return Unit((oid,), np.zeros((1, 2)))


@dataclass
class GroupLayout:
    hotspot_id: str
    offsets: dict[str, np.ndarray]
    rigid_subgroups: list[frozenset[str]]

    def array(self, ids=None) -> np.ndarray:
        ids = sorted(self.offsets) if ids is None else ids
        return np.array([self.offsets[i] for i in ids]).reshape(-1, 2)

    def min_distance(self) -> float:
        pts = self.array()
        if len(pts) < 2:
            return np.inf
        d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        return float(d[np.triu_indices(len(pts), 1)].min())

    def enclosing_radius(self, radius: float) -> float:
        pts = self.array()
        return float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).max() + radius)


@dataclass
class LayoutPlan:
    layouts: dict[str, GroupLayout]
    edge_offsets: dict[str, dict[str, np.ndarray]]
    edge_shift: dict[str, np.ndarray]
    radius: float
    # nodes where arriving formations are rearranged into the node layout
    arrivals: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def head_offset(self, eid: str, oid: str) -> np.ndarray:
        return self.edge_offsets[eid][oid] - self.edge_shift[eid]

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "nodes": {
                n: {
                    "offsets": {o: [float(v) for v in p] for o, p in sorted(gl.offsets.items())},
                    "rigid_subgroups": [sorted(s) for s in gl.rigid_subgroups],
                }
                for n, gl in sorted(self.layouts.items())
            },
            "edges": {
                e: {
                    "offsets": {o: [float(v) for v in p] for o, p in sorted(off.items())},
                    "shift": [float(v) for v in self.edge_shift[e]],
                }
                for e, off in sorted(self.edge_offsets.items())
            },
            "arrivals": {
                n: {o: [float(v) for v in p] for o, p in sorted(arr.items())}
                for n, arr in sorted(self.arrivals.items())
            },
        }


# ---------------------------------------------------------------- packing


@numba.njit(cache=True)
def _resolve(local, start, reach, trans, mass, target, sweeps):
    """Simultaneous penetration resolution: every overlapping disc pair pushes
    its two bodies apart along the center line, shared by inverse size."""
    U = trans.shape[0]
    worst = 0.0
    push = np.zeros((U, 2))
    for _sweep in range(sweeps):
        worst = 0.0
        push[:, :] = 0.0
        for ua in range(U):
            for ub in range(ua + 1, U):
                cx = trans[ub, 0] - trans[ua, 0]
                cy = trans[ub, 1] - trans[ua, 1]
                if np.sqrt(cx * cx + cy * cy) >= reach[ua] + reach[ub] + target:
                    continue
                wa = mass[ub] / (mass[ua] + mass[ub])
                for a in range(start[ua], start[ua + 1]):
                    # skip discs of ua that cannot touch body ub at all
                    ex = local[a, 0] - cx
                    ey = local[a, 1] - cy
                    if np.sqrt(ex * ex + ey * ey) >= reach[ub] + target:
                        continue
                    for b in range(start[ub], start[ub + 1]):
                        dx = local[b, 0] - local[a, 0] + cx
                        dy = local[b, 1] - local[a, 1] + cy
                        d = np.sqrt(dx * dx + dy * dy)
                        if d >= target:
                            continue
                        if d < 1e-12:
                            nx, ny = 1.0, 0.0
                        else:
                            nx, ny = dx / d, dy / d
                        depth = target - d
                        if depth > worst:
                            worst = depth
                        push[ua, 0] -= nx * depth * wa
                        push[ua, 1] -= ny * depth * wa
                        push[ub, 0] += nx * depth * (1.0 - wa)
                        push[ub, 1] += ny * depth * (1.0 - wa)
        if worst < 1e-12:
            break
        for u in range(U):
            trans[u, 0] += 0.5 * push[u, 0]
            trans[u, 1] += 0.5 * push[u, 1]
    return worst


@numba.njit(cache=True)
def _pack_kernel(local, start, reach, trans, mass, r, center_gain, neighbor_gain, max_iter, tol):
    U = trans.shape[0]
    target = 2.0 * r * (1.0 + 1e-9)
    old = trans.copy()
    iters = 0
    for _ in range(max_iter):
        iters += 1
        old[:, :] = trans
        # attraction toward the reference point and toward the nearest body
        pull = np.zeros((U, 2))
        for u in range(U):
            pull[u, 0] = -center_gain * old[u, 0]
            pull[u, 1] = -center_gain * old[u, 1]
            best = -1
            bd = np.inf
            for v in range(U):
                if v == u:
                    continue
                dx = old[v, 0] - old[u, 0]
                dy = old[v, 1] - old[u, 1]
                d = dx * dx + dy * dy
                if d < bd:
                    bd = d
                    best = v
            if best >= 0:
                pull[u, 0] += neighbor_gain * (old[best, 0] - old[u, 0])
                pull[u, 1] += neighbor_gain * (old[best, 1] - old[u, 1])
        for u in range(U):
            trans[u, 0] += pull[u, 0]
            trans[u, 1] += pull[u, 1]
        _resolve(local, start, reach, trans, mass, target, 4)
        moved = 0.0
        for u in range(U):
            m = np.sqrt((trans[u, 0] - old[u, 0]) ** 2 + (trans[u, 1] - old[u, 1]) ** 2)
            if m > moved:
                moved = m
        if moved < tol:
            break
    _resolve(local, start, reach, trans, mass, target, 2000)
    return trans, iters


@numba.njit(cache=True)
def _body_fits(local, start, placed, n_placed, u, tx, ty, target):
    for a in range(start[u], start[u + 1]):
        ax = local[a, 0] + tx
        ay = local[a, 1] + ty
        for k in range(n_placed):
            dx = placed[k, 0] - ax
            dy = placed[k, 1] - ay
            if dx * dx + dy * dy < target * target:
                return False
    return True


@numba.njit(cache=True)
def _greedy_place(local, start, desired, order, target, angles):
    """Place bodies one by one, each at its desired translation if free,
    else at the nearest translation where one of its discs touches a
    placed disc without any overlap."""
    U = desired.shape[0]
    out = desired.copy()
    placed = np.zeros((local.shape[0], 2))
    n_placed = 0
    for ui in range(U):
        u = order[ui]
        tx, ty = desired[u, 0], desired[u, 1]
        if not _body_fits(local, start, placed, n_placed, u, tx, ty, target):
            tx, ty = _nearest_fit(local, start, placed, n_placed, u, desired[u, 0], desired[u, 1], target, angles, 48)
            if np.isnan(tx):
                tx, ty = _nearest_fit(local, start, placed, n_placed, u, desired[u, 0], desired[u, 1], target, angles, n_placed)
        out[u, 0] = tx
        out[u, 1] = ty
        for a in range(start[u], start[u + 1]):
            placed[n_placed, 0] = local[a, 0] + tx
            placed[n_placed, 1] = local[a, 1] + ty
            n_placed += 1
    return out


@numba.njit(cache=True)
def _nearest_fit(local, start, placed, n_placed, u, dx0, dy0, target, angles, near):
    """Closest free translation of body u to (dx0, dy0) where one of its discs
    touches one of the ``near`` placed discs closest to that spot; NaN if none."""
    dist = np.empty(n_placed)
    for k in range(n_placed):
        dist[k] = (placed[k, 0] - dx0) ** 2 + (placed[k, 1] - dy0) ** 2
    pick = np.argsort(dist, kind="mergesort")[: min(near, n_placed)]
    m = start[u + 1] - start[u]
    cand = np.zeros((len(pick) * m * angles, 3))
    c = 0
    for k in pick:
        for a in range(start[u], start[u + 1]):
            for j in range(angles):
                th = 2.0 * np.pi * j / angles
                cx = placed[k, 0] + target * np.cos(th) - local[a, 0]
                cy = placed[k, 1] + target * np.sin(th) - local[a, 1]
                cand[c, 0] = (cx - dx0) ** 2 + (cy - dy0) ** 2
                cand[c, 1] = cx
                cand[c, 2] = cy
                c += 1
    idx = np.argsort(cand[:c, 0], kind="mergesort")
    for q in range(c):
        i = idx[q]
        if _body_fits(local, start, placed, n_placed, u, cand[i, 1], cand[i, 2], target):
            return cand[i, 1], cand[i, 2]
    return np.nan, np.nan


def _clear(pos: np.ndarray, unit_of: np.ndarray, r: float) -> bool:
    if len(pos) < 2:
        return True
    d = np.linalg.norm(pos[:, None] - pos[None], axis=2)
    cross = unit_of[:, None] != unit_of[None]
    return bool((d[cross] >= 2 * r).all()) if cross.any() else True


def exit_order_score(layout: GroupLayout, exit_direction, ranks: dict[frozenset, int]) -> float:
    """Pearson correlation between rank and distance behind the exit (1 when none varies)."""
    d = np.asarray(exit_direction, dtype=float)
    rk, behind = [], []
    for body, rank in ranks.items():
        for o in body:
            rk.append(rank)
            behind.append(-float(layout.offsets[o] @ d))
    rk, behind = np.array(rk, float), np.array(behind)
    if rk.std() < 1e-15 or behind.std() < 1e-15:
        return 1.0
    return float(np.corrcoef(rk, behind)[0, 1])


def exit_order_ok(layout: GroupLayout, exit_direction, ranks: dict[frozenset, int]) -> bool:
    return exit_order_score(layout, exit_direction, ranks) >= 0.0


# zigzag sign and amplitude (in radii) tried in turn for three or more bodies
_ZIGZAGS = ((1.0, 0.25), (-1.0, 0.25), (1.0, 0.5), (-1.0, 0.5), (1.0, 0.1), (-1.0, 0.1))


def _line_start(centred, order, d, radius, zig=(1.0, 0.0)):
    """Bodies side by side along the exit direction, rank 0 in front.

    Their extents along the direction are disjoint, so this start never
    overlaps; a small zigzag across the line lets the packing leave it.
    """
    sign, amp = zig
    perp = np.array([-d[1], d[0]])
    trans = np.zeros((len(centred), 2))
    cursor = 0.0
    for k, i in enumerate(order):
        proj = centred[i] @ d
        hi, lo = proj.max() + radius, proj.min() - radius
        side = 0.0 if k == 0 else (sign if k % 2 else -sign)
        trans[i] = (cursor - hi) * d + side * amp * radius * perp
        cursor = cursor - hi + lo
    return trans - trans.mean(axis=0)


def _pack_once(centred, order, d, radius, p, zig):
    line = _line_start(centred, order, d, radius)
    if zig is None:
        # the line pulled together and placed body by body, rank order first
        local = np.vstack(centred)
        start = np.concatenate([[0], np.cumsum([len(c) for c in centred])]).astype(np.int64)
        target = 2.0 * radius * (1.0 + 2e-9)
        trans = _greedy_place(local, start, 0.3 * line, np.array(order, dtype=np.int64), target, 24)
    else:
        trans = _line_start(centred, order, d, radius, zig)
    return _settle(centred, trans, radius, p, line)


def _settle(centred, trans, radius, p, fallback):
    local = np.vstack(centred)
    unit_of = np.concatenate([np.full(len(c), i, dtype=np.int64) for i, c in enumerate(centred)])
    mass = np.array([len(c) for c in centred], dtype=float)
    start = np.concatenate([[0], np.cumsum([len(c) for c in centred])]).astype(np.int64)
    reach = np.array([np.linalg.norm(c, axis=1).max() for c in centred])
    trans, _ = _pack_kernel(
        local, start, reach, trans, mass, float(radius),
        p.center_gain, p.neighbor_gain, int(p.max_iterations), float(p.tolerance),
    )
    # a jammed packing is loosened a little and resolved again; if that is not
    # enough the bodies are re-placed greedily around their packed spots,
    # which cannot overlap
    target = 2.0 * radius * (1.0 + 1e-9)
    for _ in range(8):
        if _clear(local + trans[unit_of], unit_of, radius):
            break
        trans = trans * 1.01
        _resolve(local, start, reach, trans, mass, target, 200)
    else:
        if not _clear(local + trans[unit_of], unit_of, radius):
            order = np.argsort(np.linalg.norm(trans, axis=1), kind="stable").astype(np.int64)
            best = None
            for shrink in (1.0, 0.8, 0.6):
                t = _greedy_place(local, start, trans * shrink, order, target * (1.0 + 1e-9), 24)
                pos = local + t[unit_of]
                spread = float(np.linalg.norm(pos - pos.mean(axis=0), axis=1).max())
                if best is None or spread < best[0]:
                    best = (spread, t)
            trans = best[1]
            if not _clear(local + trans[unit_of], unit_of, radius):
                trans = fallback.copy()
    pos = local + trans[unit_of]
    return pos - pos.mean(axis=0), trans - trans.mean(axis=0)


def pack_group(
    units: list[Unit],
    exit_direction,
    departure_rank: list[int] | None = None,
    radius: float = DEFAULT_RADIUS,
    params: LayoutParams | None = None,
    hotspot_id: str = "",
) -> GroupLayout:
    p = params or LayoutParams(radius=radius)
    if not units:
        raise ValueError("pack_group needs at least one member")
    d = np.asarray(exit_direction, dtype=float)
    n = np.linalg.norm(d)
    d = d / n if n > 1e-12 else np.array([1.0, 0.0])
    ranks = list(departure_rank) if departure_rank is not None else [0] * len(units)

    centred = [u.offsets - u.offsets.mean(axis=0) for u in units]
    order = sorted(range(len(units)), key=lambda i: (ranks[i], min(units[i].ids)))
    body_rank = {frozenset(u.ids): r for u, r in zip(units, ranks)}

    def assemble(pos):
        offsets = {}
        k = 0
        for u in units:
            for oid in u.ids:
                offsets[oid] = pos[k].copy()
                k += 1
        return GroupLayout(hotspot_id, offsets, [frozenset(u.ids) for u in units])

    if len(units) == 1:
        return assemble(centred[0])
    def judge(pos, trans):
        gl = assemble(pos)
        score = exit_order_score(gl, d, body_rank)
        return (score < 0.0, gl.enclosing_radius(radius), -score), gl, trans

    bound = 2.0 * radius * np.sqrt(sum(len(u.ids) for u in units))
    best = None
    for zig in _ZIGZAGS + (None,) if len(units) > 2 else ((1.0, 0.0),):
        cand = judge(*_pack_once(centred, order, d, radius, p, zig))
        if best is None or cand[0] < best[0]:
            best = cand
        if not best[0][0] and best[0][1] <= bound:
            break
    if best[0][0]:
        # formation came out facing backwards: mirror body placements along the exit
        t = best[2]
        mirrored = t - 2.0 * np.outer(t @ d, d)
        cand = judge(*_settle(centred, mirrored, radius, p, _line_start(centred, order, d, radius)))
        if cand[0] < best[0]:
            best = cand
    if (best[0][0] or best[0][1] > bound) and all(len(u.ids) == 1 for u in units):
        # lattice sites handed out front to back in rank order: ordered by construction
        sites = _hex_sites(len(units), radius)
        front = np.argsort(-(sites @ d), kind="stable")
        trans = np.zeros((len(units), 2))
        trans[order] = sites[front]
        cand = judge(trans, trans)
        if cand[0] < best[0]:
            best = cand
    return best[1]


def exit_axis(directions: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Principal axis of the outgoing directions and a rank per direction.

    The group whose direction projects farthest along the axis departs on
    that side and gets rank 0.
    """
    dirs = np.asarray(directions, dtype=float)
    if len(dirs) == 1:
        return dirs[0], [0]
    centred = dirs - dirs.mean(axis=0)
    _, _, vt = np.linalg.svd(centred)
    axis = vt[0]
    proj = dirs @ axis
    if proj.max() - proj.min() < 1e-12:
        axis = dirs.mean(axis=0)
        proj = dirs @ axis
    # deterministic sign: the first group points along +axis
    if proj[0] < proj.min() + 0.5 * (proj.max() - proj.min()):
        axis, proj = -axis, -proj
    order = sorted(range(len(dirs)), key=lambda i: -proj[i])
    ranks = [0] * len(dirs)
    for rank, i in enumerate(order):
        ranks[i] = rank
    return axis, ranks


def build_layout_plan(
    g: HotspotGraph,
    order: LayoutOrder,
    discs: list[ObjectDisc] | float = DEFAULT_RADIUS,
    params: LayoutParams | None = None,
) -> LayoutPlan:
    if isinstance(discs, (int, float)):
        radius = float(discs)
    else:
        radii = {d.radius for d in discs}
        if len(radii) > 1:
            raise ValueError("all discs must share one radius")
        radius = radii.pop() if radii else DEFAULT_RADIUS
    p = params or LayoutParams(radius=radius)

    layouts: dict[str, GroupLayout] = {}
    formations: dict[str, dict[str, np.ndarray]] = {}  # edge -> offsets on arrival
    arrivals: dict[str, dict[str, np.ndarray]] = {}
    for nid in order.nodes:
        layouts[nid] = _node_layout(g, nid, layouts, formations, radius, p)
        _arrival_formations(g, nid, layouts[nid], formations, arrivals, radius)

    edge_offsets: dict[str, dict[str, np.ndarray]] = {}
    edge_shift: dict[str, np.ndarray] = {}
    for eid in sorted(g.edges):
        e = g.edges[eid]
        tail, head = layouts[e.tail], formations[eid]
        ids = sorted(e.members)
        edge_offsets[eid] = {o: tail.offsets[o] for o in ids}
        # one shared translation takes the formation from the tail layout to its arrival place
        edge_shift[eid] = tail.offsets[ids[0]] - head[ids[0]]
    return LayoutPlan(layouts, edge_offsets, edge_shift, radius, arrivals)


def _node_layout(g, nid, layouts, formations, radius, p) -> GroupLayout:
    outs = g.out_edges[nid]
    if not outs:
        oid = g.nodes[nid].object_id
        return GroupLayout(nid, {oid: np.zeros(2)}, [frozenset([oid])])
    units = []
    for eid in outs:
        ids = tuple(sorted(g.edges[eid].members))
        units.append(Unit(ids, np.array([formations[eid][o] for o in ids])))
    if len(units) == 1:
        u = units[0]
        off = u.offsets - u.offsets.mean(axis=0)
        return GroupLayout(nid, {o: off[i].copy() for i, o in enumerate(u.ids)}, [frozenset(u.ids)])
    dirs = np.array([g.edges[e].direction_at_tail() for e in outs])
    axis, ranks = exit_axis(dirs)
    return pack_group(units, axis, ranks, radius, p, hotspot_id=nid)


def _arrival_formations(g, nid, layout: GroupLayout, formations, arrivals, radius) -> None:
    """Formation each in-edge travels in, as offsets at this node.

    With a single in-edge the travellers arrive already in the node layout.
    Where several edges merge, each edge's share of the layout has holes
    that would compound upstream. A share that is too loose is re-formed
    on a hex lattice, and its objects rearrange into the node layout while
    they dwell here.
    """
    ins = g.in_edges[nid]
    changed = False
    for eid in ins:
        ids = sorted(g.edges[eid].members)
        share = np.array([layout.offsets[o] for o in ids])
        form = share
        if len(ins) > 1 and len(ids) > 1 and _spread(share) + radius > SHARE_SLACK * 2.0 * radius * np.sqrt(len(ids)):
            form, changed = hex_formation(share, radius), True
        formations[eid] = {o: form[i].copy() for i, o in enumerate(ids)}
    if changed:
        arrivals[nid] = {o: v for eid in ins for o, v in formations[eid].items()}


def hex_formation(points: np.ndarray, radius: float) -> np.ndarray:
    """The n hex-lattice sites nearest the centroid, assigned to the points so
    their arrangement is kept as far as a minimum-cost matching allows."""
    pts = np.asarray(points, dtype=float)
    sites = _hex_sites(len(pts), radius)
    centred = pts - pts.mean(axis=0)
    scale = _spread(sites) / max(_spread(centred), 1e-15)
    cost = ((centred[:, None, :] * scale - sites[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    out = np.zeros_like(centred)
    out[rows] = sites[cols]
    return out + pts.mean(axis=0)


def _hex_sites(n: int, radius: float) -> np.ndarray:
    """The n sites of a touching-disc hex lattice nearest its origin, centred."""
    step = 2.0 * radius * (1.0 + 2e-9)
    k = int(np.ceil(np.sqrt(n))) + 2
    i, j = np.meshgrid(np.arange(-k, k + 1), np.arange(-k, k + 1), indexing="ij")
    sites = np.stack([(i + 0.5 * j).ravel(), (j * np.sqrt(3.0) / 2.0).ravel()], axis=1) * step
    dist = np.round(np.linalg.norm(sites, axis=1) / step, 9)
    ang = np.arctan2(sites[:, 1], sites[:, 0])
    sites = sites[np.lexsort((ang, dist))][:n]
    return sites - sites.mean(axis=0)


def _spread(pts: np.ndarray) -> float:
    return float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).max())
