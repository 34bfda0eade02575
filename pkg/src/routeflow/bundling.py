"""Force-directed, bottom-up hierarchical edge bundling.

Each level runs a synchronous force loop (attraction toward top-k compatible
polylines, spring smoothing, anchor pull toward the original resampled
position), then merges the portions where polylines run within
``merge_delta`` of each other. Merged control points are frozen: later levels
neither move nor re-merge them.

Between levels the objects whose interior control points are identical are
collapsed into a single unit polyline, so level ``L + 1`` bundles the merged
output of level ``L`` with an attraction ``level_attraction_factor`` times
stronger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import (
    CompatibilityIndex,
    ControlPolyline,
    TrajectorySet,
    compatibility_matrix,
    pairwise_dtw,
    resample,
    top_k,
)
from .errors import EmptyInput


@dataclass(frozen=True)
class BundlingParams:
    eta: float = 0.01
    alpha: float = 5.0
    beta: float = 1.0
    k: int = 5
    iterations: int = 300
    step: float = 2e-5
    max_move: float = 0.001
    level_attraction_factor: float = 10.0
    max_levels: int = 4
    merge_delta: float = 0.02
    min_run: int = 3
    control_points: int = 32

    def __post_init__(self):
        checks = {
            "eta": self.eta > 0,
            "alpha": self.alpha >= 0,
            "beta": self.beta >= 0,
            "k": self.k >= 1,
            "iterations": self.iterations >= 0,
            "step": self.step > 0,
            "max_move": self.max_move > 0,
            "level_attraction_factor": self.level_attraction_factor >= 1,
            "max_levels": self.max_levels >= 1,
            "merge_delta": self.merge_delta > 0,
            "min_run": self.min_run >= 2,
            "control_points": self.control_points >= 2,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid bundling parameters: {', '.join(bad)}")


@dataclass(frozen=True)
class LevelResult:
    level: int
    polylines: dict[str, ControlPolyline]
    membership: dict[str, frozenset[str]]
    merged_portions: dict[str, list[tuple[int, int]]]
    level_factor: float = 1.0


@dataclass(frozen=True)
class BundleHierarchy:
    levels: list[LevelResult]
    final_paths: dict[str, ControlPolyline]
    frozen: dict[str, np.ndarray]
    weights: dict[str, int]
    params: BundlingParams = field(default_factory=BundlingParams)


# ---------------------------------------------------------------- forces


def attraction_force(u_i, v_j, C_v: int, eta: float) -> np.ndarray:
    u_i = np.asarray(u_i, dtype=np.float64)
    v_j = np.asarray(v_j, dtype=np.float64)
    d = v_j - u_i
    return eta * d / (C_v * (eta**2 + d @ d) ** 2)


def spring_force(u_prev, u_i, u_next, C_u: int) -> np.ndarray:
    return C_u * (np.asarray(u_next, float) + np.asarray(u_prev, float) - 2 * np.asarray(u_i, float))


def anchor_force(u_i, u_anchor) -> np.ndarray:
    d = np.asarray(u_anchor, dtype=np.float64) - np.asarray(u_i, dtype=np.float64)
    # |d|^2 * d/|d| collapses to |d| * d, which is also the zero-length limit
    return np.sqrt(d @ d) * d


def resultant_force(
    polylines: list[ControlPolyline],
    index: int,
    compat: CompatibilityIndex,
    params: BundlingParams,
    level_factor: float = 1.0,
) -> np.ndarray:
    """Per-control-point resultant force on ``polylines[index]``; endpoints get zero."""
    u = polylines[index]
    by_id = {p.trajectory_id: p for p in polylines}
    nbrs = [by_id[n] for n in compat.neighbor_ids(u.trajectory_id)]
    C = u.count
    out = np.zeros((C, 2))
    for i in range(1, C - 1):
        att = np.zeros(2)
        for v in nbrs:
            for vj in v.current:
                att += attraction_force(u.current[i], vj, v.count, params.eta)
        spr = spring_force(u.current[i - 1], u.current[i], u.current[i + 1], C)
        anc = anchor_force(u.current[i], u.anchor[i])
        out[i] = level_factor * att + params.alpha * spr + params.beta * anc
    return out


@numba.njit(cache=True)
def _force_loop(pos, anchor, movable, nbrs, iterations, eta, alpha, beta, step, max_move, level_factor):
    U, C = pos.shape[0], pos.shape[1]
    K = nbrs.shape[1]
    eta2 = eta * eta
    cur = pos.copy()
    nxt = pos.copy()
    for _ in range(iterations):
        for u in range(U):
            for i in range(1, C - 1):
                if not movable[u, i]:
                    continue
                ux = cur[u, i, 0]
                uy = cur[u, i, 1]
                ax = 0.0
                ay = 0.0
                for q in range(K):
                    v = nbrs[u, q]
                    if v < 0:
                        continue
                    for j in range(C):
                        dx = cur[v, j, 0] - ux
                        dy = cur[v, j, 1] - uy
                        den = eta2 + dx * dx + dy * dy
                        w = eta / (C * den * den)
                        ax += w * dx
                        ay += w * dy
                sx = C * (cur[u, i + 1, 0] + cur[u, i - 1, 0] - 2.0 * ux)
                sy = C * (cur[u, i + 1, 1] + cur[u, i - 1, 1] - 2.0 * uy)
                gx = anchor[u, i, 0] - ux
                gy = anchor[u, i, 1] - uy
                g = np.sqrt(gx * gx + gy * gy)
                fx = level_factor * ax + alpha * sx + beta * g * gx
                fy = level_factor * ay + alpha * sy + beta * g * gy
                mx = step * fx
                my = step * fy
                m = np.sqrt(mx * mx + my * my)
                if m > max_move:
                    # the attraction is stiff near eta; cap the move to stay stable
                    mx *= max_move / m
                    my *= max_move / m
                nxt[u, i, 0] = ux + mx
                nxt[u, i, 1] = uy + my
        cur, nxt = nxt, cur
    return cur


def run_forces(
    pos: np.ndarray,
    anchor: np.ndarray,
    movable: np.ndarray,
    nbrs: np.ndarray,
    params: BundlingParams,
    level_factor: float,
    iterations: int | None = None,
) -> np.ndarray:
    """Synchronous force iterations over a ``(U, C, 2)`` stack; immovable points stay put."""
    its = params.iterations if iterations is None else iterations
    return _force_loop(
        np.ascontiguousarray(pos, dtype=np.float64),
        np.ascontiguousarray(anchor, dtype=np.float64),
        np.ascontiguousarray(movable, dtype=np.bool_),
        np.ascontiguousarray(nbrs, dtype=np.int64),
        int(its),
        float(params.eta),
        float(params.alpha),
        float(params.beta),
        float(params.step),
        float(params.max_move),
        float(level_factor),
    )


def relax(tset: TrajectorySet, params: BundlingParams = BundlingParams()) -> dict[str, np.ndarray]:
    """Level-1 force loop alone: no merging, endpoints pinned. Returns id -> (C, 2)."""
    trajs = sorted(tset.trajectories, key=lambda t: t.id)
    if not trajs:
        raise EmptyInput("nothing to bundle")
    ids = [t.id for t in trajs]
    lines = [resample(t, params.control_points) for t in trajs]
    pos = np.stack([p.current for p in lines])
    if len(ids) < 2:
        return {ids[0]: pos[0]}
    movable = np.ones(pos.shape[:2], dtype=bool)
    movable[:, 0] = movable[:, -1] = False
    table, _ = _neighbor_table(pos, params.k, ids)
    new = run_forces(pos, np.stack([p.anchor for p in lines]), movable, table, params, 1.0)
    return dict(zip(ids, new))


# ---------------------------------------------------------------- merging


def _run_mask(close: np.ndarray, min_run: int) -> np.ndarray:
    """Keep only runs of True of length >= min_run along axis 1."""
    P, M = close.shape
    padded = np.zeros((P, M + 2), dtype=bool)
    padded[:, 1:-1] = close
    flat = padded.ravel()
    edges = np.diff(flat.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    keep = (ends - starts) >= min_run
    marks = np.zeros(flat.size + 1, dtype=np.int32)
    np.add.at(marks, starts[keep], 1)
    np.add.at(marks, ends[keep], -1)
    return (np.cumsum(marks)[:-1] > 0).reshape(P, M + 2)[:, 1:-1]


def detect_merges(
    pos: np.ndarray, frozen: np.ndarray, merge_delta: float, min_run: int
) -> list[tuple[int, np.ndarray]]:
    """Per interior index, the components of units that merge there.

    Returns ``(index, labels)`` for every index with at least one component
    of two or more units; ``labels[u]`` is the component label of unit ``u``.
    """
    U, C = pos.shape[0], pos.shape[1]
    if U < 2 or C < 3:
        return []
    left, right = np.triu_indices(U, k=1)
    inner = slice(1, C - 1)
    dist = np.linalg.norm(pos[left, inner] - pos[right, inner], axis=2)
    free = ~frozen[left, inner] & ~frozen[right, inner]
    close = _run_mask((dist < merge_delta) & free, min_run)
    out = []
    for col in np.flatnonzero(close.any(axis=0)):
        sel = close[:, col]
        graph = coo_matrix((np.ones(sel.sum()), (left[sel], right[sel])), shape=(U, U))
        _, labels = connected_components(graph, directed=False)
        out.append((int(col) + 1, labels))
    return out


def _ranges(mask: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return [(int(a), int(b)) for a, b in zip(starts, ends)]


# ---------------------------------------------------------------- levels


class _State:
    """Mutable per-object bundling state shared across levels."""

    def __init__(self, polylines: list[ControlPolyline], weights: dict[str, int]):
        self.ids = [p.trajectory_id for p in polylines]
        self.paths = np.stack([p.current for p in polylines]).copy()
        self.anchors = np.stack([p.anchor for p in polylines]).copy()
        self.frozen = np.zeros(self.paths.shape[:2], dtype=bool)
        self.weights = np.array([weights.get(i, 1) for i in self.ids], dtype=np.float64)
        self.degenerate = {p.trajectory_id: p.degenerate for p in polylines}

    def units(self) -> list[list[int]]:
        """Objects with bit-identical interior control points form one unit."""
        groups: dict[bytes, list[int]] = {}
        for o in range(len(self.ids)):
            groups.setdefault(self.paths[o, 1:-1].tobytes(), []).append(o)
        units = [sorted(g, key=lambda o: self.ids[o]) for g in groups.values()]
        units.sort(key=lambda g: self.ids[g[0]])
        return units

    def unit_stack(self, units):
        w = [self.weights[g] / self.weights[g].sum() for g in units]
        pos = np.stack([np.tensordot(wi, self.paths[g], axes=1) for wi, g in zip(w, units)])
        anc = np.stack([np.tensordot(wi, self.anchors[g], axes=1) for wi, g in zip(w, units)])
        # interior is shared bit-for-bit; keep it exact rather than re-averaged
        for u, g in enumerate(units):
            pos[u, 1:-1] = self.paths[g[0], 1:-1]
        frozen = np.stack([self.frozen[g].any(axis=0) for g in units])
        return pos, anc, frozen


def _neighbor_table(pos: np.ndarray, k: int, ids: list[str]) -> tuple[np.ndarray, CompatibilityIndex]:
    U = pos.shape[0]
    comp = compatibility_matrix(pairwise_dtw(pos))
    index = top_k(ids, comp, k)
    col = {tid: i for i, tid in enumerate(ids)}
    table = -np.ones((U, min(k, U - 1)), dtype=np.int64)
    for i, tid in enumerate(ids):
        for q, nid in enumerate(index.neighbor_ids(tid)):
            table[i, q] = col[nid]
    return table, index


def _run_level(state: _State, params: BundlingParams, level: int) -> tuple[LevelResult, int]:
    units = state.units()
    unit_ids = [state.ids[g[0]] for g in units]
    pos, anc, ufrozen = state.unit_stack(units)
    level_factor = params.level_attraction_factor ** (level - 1)
    C = pos.shape[1]

    movable = ~ufrozen
    movable[:, 0] = movable[:, -1] = False
    if len(units) >= 2 and movable.any() and params.iterations > 0:
        table, _ = _neighbor_table(pos, params.k, unit_ids)
        new = run_forces(pos, anc, movable, table, params, level_factor)
        for u, g in enumerate(units):
            m = movable[u]
            state.paths[np.ix_(g, np.flatnonzero(m))] = new[u, m]
        pos = new

    newly = np.zeros_like(state.frozen)
    merges = detect_merges(pos, ufrozen, params.merge_delta, params.min_run)
    uweights = np.array([state.weights[g].sum() for g in units])
    n_merged = 0
    for c, labels in merges:
        for lab in np.unique(labels):
            comp = np.flatnonzero(labels == lab)
            if comp.size < 2:
                continue
            w = uweights[comp] / uweights[comp].sum()
            point = w @ pos[comp, c]
            members = [o for u in comp for o in units[u]]
            state.paths[members, c] = point
            state.frozen[members, c] = True
            newly[members, c] = True
            n_merged += 1

    out_units = state.units()
    pos, anc, _ = state.unit_stack(out_units)
    polylines, membership, portions = {}, {}, {}
    for u, g in enumerate(out_units):
        uid = state.ids[g[0]]
        polylines[uid] = ControlPolyline(uid, pos[u], anc[u])
        membership[uid] = frozenset(state.ids[o] for o in g)
        portions[uid] = _ranges(newly[g].any(axis=0))
    assert all(0 <= a <= b < C for r in portions.values() for a, b in r)
    return LevelResult(level, polylines, membership, portions, level_factor), n_merged


def bundle_level(
    polylines: list[ControlPolyline], params: BundlingParams, level: int = 1
) -> LevelResult:
    state = _State(list(polylines), {})
    result, _ = _run_level(state, params, level)
    return result


def bundle_hierarchy(
    tset: TrajectorySet, params: BundlingParams = BundlingParams()
) -> BundleHierarchy:
    if len(tset) == 0:
        raise EmptyInput("nothing to bundle")
    trajs = sorted(tset.trajectories, key=lambda t: t.id)
    polylines = [resample(t, params.control_points) for t in trajs]
    weights = {t.id: t.weight for t in trajs}
    state = _State(polylines, weights)

    levels: list[LevelResult] = []
    for level in range(1, params.max_levels + 1):
        snapshot = state.paths.copy(), state.frozen.copy()
        result, n_merged = _run_level(state, params, level)
        if level > 1 and n_merged == 0:
            state.paths, state.frozen = snapshot
            break
        levels.append(result)
        if n_merged == 0 or len(result.polylines) < 2:
            break

    final = {
        oid: ControlPolyline(oid, state.paths[o], state.anchors[o], state.degenerate[oid])
        for o, oid in enumerate(state.ids)
    }
    frozen = {oid: state.frozen[o].copy() for o, oid in enumerate(state.ids)}
    return BundleHierarchy(levels, final, frozen, weights, params)
