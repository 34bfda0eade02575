"""Trajectory containers, normalization, resampling, DTW and compatibility.

Point sequences are stored as read-only ``(n, 2)`` float64 arrays; a single
point is a length-2 array or any ``(x, y)`` pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numba
import numpy as np
from shapely.geometry import LineString

from .errors import DegenerateExtent, EmptyIndex, EmptyInput, ParseError

Point2 = tuple[float, float]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _dedupe(points: np.ndarray) -> np.ndarray:
    if len(points) < 2:
        return points
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    return points[keep]


@dataclass(frozen=True)
class Trajectory:
    id: str
    points: np.ndarray
    weight: int = 1

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"trajectory {self.id!r}: points must be (n, 2)")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"trajectory {self.id!r}: non-finite coordinate")
        if int(self.weight) < 1:
            raise ValueError(f"trajectory {self.id!r}: weight must be >= 1")
        pts = _dedupe(pts)
        if len(pts) == 1:
            # a stationary object keeps two copies of its single location
            pts = np.vstack([pts, pts])
        if len(pts) < 2:
            raise ValueError(f"trajectory {self.id!r}: needs at least 2 points")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weight", int(self.weight))

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass(frozen=True)
class SceneBounds:
    """Original bounding box plus the aspect-preserving map into the unit square."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def extent(self) -> float:
        return max(self.xmax - self.xmin, self.ymax - self.ymin)

    @property
    def shift(self) -> np.ndarray:
        e = self.extent
        return np.array(
            [(1.0 - (self.xmax - self.xmin) / e) / 2.0, (1.0 - (self.ymax - self.ymin) / e) / 2.0]
        )

    def to_unit(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - np.array([self.xmin, self.ymin])) / self.extent + self.shift

    def to_original(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - self.shift) * self.extent + np.array([self.xmin, self.ymin])


@dataclass(frozen=True)
class TrajectorySet:
    trajectories: tuple[Trajectory, ...]
    scene_bounds: SceneBounds | None = None
    normalized: bool = False

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        ids = [t.id for t in trajs]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate trajectory ids: {dup}")
        object.__setattr__(self, "trajectories", trajs)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.trajectories]

    def by_id(self) -> dict[str, Trajectory]:
        return {t.id: t for t in self.trajectories}

    def sorted(self) -> "TrajectorySet":
        return TrajectorySet(
            tuple(sorted(self.trajectories, key=lambda t: t.id)), self.scene_bounds, self.normalized
        )

    def total_weight(self) -> int:
        return sum(t.weight for t in self.trajectories)


@dataclass(frozen=True)
class ControlPolyline:
    trajectory_id: str
    current: np.ndarray
    anchor: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        cur = np.asarray(self.current, dtype=np.float64)
        anc = np.asarray(self.anchor, dtype=np.float64)
        if cur.shape != anc.shape or cur.ndim != 2 or cur.shape[1] != 2:
            raise ValueError("current and anchor must both be (C, 2)")
        object.__setattr__(self, "current", _frozen(cur))
        object.__setattr__(self, "anchor", _frozen(anc))

    @property
    def count(self) -> int:
        return len(self.current)

    def moved(self, current) -> "ControlPolyline":
        return ControlPolyline(self.trajectory_id, current, self.anchor, self.degenerate)


@dataclass(frozen=True)
class CompatibilityIndex:
    neighbors: Mapping[str, list[tuple[str, float]]]

    def neighbor_ids(self, tid: str) -> list[str]:
        return [n for n, _ in self.neighbors.get(tid, [])]


@dataclass(frozen=True)
class PreprocessConfig:
    max_step: float = 0.2
    simplify_eps: float = 0.002
    merge_eps: float = 0.01
    control_points: int = 32


# ---------------------------------------------------------------- normalize


def normalize(tset: TrajectorySet) -> TrajectorySet:
    """Map every point into the unit square, preserving aspect ratio.

    The longer bounding-box axis spans ``[0, 1]``; the shorter one is centered.
    """
    if len(tset) == 0:
        raise EmptyInput("trajectory set is empty")
    allpts = np.vstack([t.points for t in tset])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    if np.all(hi - lo <= 0):
        raise DegenerateExtent("bounding box has zero extent in both axes")
    bounds = SceneBounds(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
    trajs = tuple(Trajectory(t.id, bounds.to_unit(t.points), t.weight) for t in tset)
    return TrajectorySet(trajs, bounds, normalized=True)


# ---------------------------------------------------------------- resample


def resample_points(points: np.ndarray, count: int) -> np.ndarray:
    """``count`` points equally spaced by arc length; endpoints copied exactly."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        return np.repeat(pts[:1], count, axis=0)
    targets = np.linspace(0.0, total, count)
    out = np.empty((count, 2))
    out[:, 0] = np.interp(targets, cum, pts[:, 0])
    out[:, 1] = np.interp(targets, cum, pts[:, 1])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def resample(traj: Trajectory, C: int) -> ControlPolyline:
    if C < 2:
        raise ValueError("control-point count must be >= 2")
    pts = resample_points(traj.points, C)
    return ControlPolyline(traj.id, pts, pts.copy(), degenerate=traj.length() <= 0.0)


# ---------------------------------------------------------------- DTW


@numba.njit(cache=True)
def _dtw_kernel(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.full(m + 1, np.inf)
    cur = np.full(m + 1, np.inf)
    prev[0] = 0.0
    for i in range(n):
        cur[0] = np.inf
        for j in range(m):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            cost = np.sqrt(dx * dx + dy * dy)
            best = prev[j]
            if prev[j + 1] < best:
                best = prev[j + 1]
            if cur[j] < best:
                best = cur[j]
            cur[j + 1] = cost + best
        prev, cur = cur, prev
    return prev[m]


@numba.njit(cache=True)
def _dtw_pairs_kernel(stack, left, right):
    out = np.empty(left.shape[0])
    for p in range(left.shape[0]):
        out[p] = _dtw_kernel(stack[left[p]], stack[right[p]])
    return out


def dtw(a, b) -> float:
    """Dynamic time warping distance with Euclidean point cost, summed over the path."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("dtw needs non-empty sequences")
    return float(_dtw_kernel(a, b))


def pairwise_dtw(stack: np.ndarray) -> np.ndarray:
    """Symmetric DTW matrix of an ``(n, C, 2)`` stack of equal-length polylines."""
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    n = stack.shape[0]
    left, right = np.triu_indices(n, k=1)
    vals = _dtw_pairs_kernel(stack, left.astype(np.int64), right.astype(np.int64))
    mat = np.zeros((n, n))
    mat[left, right] = vals
    mat[right, left] = vals
    return mat


# ---------------------------------------------------------------- compatibility


def compatibility_matrix(dist: np.ndarray) -> np.ndarray:
    """1 - min-max normalized distance over unordered pairs; diagonal is NaN."""
    n = dist.shape[0]
    iu = np.triu_indices(n, k=1)
    vals = dist[iu]
    lo, hi = vals.min(), vals.max()
    comp = np.ones_like(dist) if hi == lo else 1.0 - (dist - lo) / (hi - lo)
    np.fill_diagonal(comp, np.nan)
    return comp


def top_k(ids: Sequence[str], comp: np.ndarray, k: int) -> CompatibilityIndex:
    neighbors = {}
    for i, tid in enumerate(ids):
        cands = [(ids[j], float(comp[i, j])) for j in range(len(ids)) if j != i]
        cands.sort(key=lambda c: (-c[1], c[0]))
        neighbors[tid] = cands[:k]
    return CompatibilityIndex(neighbors)


def build_compatibility(polylines: Sequence[ControlPolyline], k: int) -> CompatibilityIndex:
    if len(polylines) < 2:
        raise EmptyIndex("compatibility needs at least two polylines")
    stack = np.stack([p.current for p in polylines])
    comp = compatibility_matrix(pairwise_dtw(stack))
    return top_k([p.trajectory_id for p in polylines], comp, k)


# ---------------------------------------------------------------- preprocess


def filter_spikes(points: np.ndarray, max_step: float) -> np.ndarray:
    """Drop interior points that jump out by more than ``max_step`` and come back.

    A point is a spike when both steps touching it exceed ``max_step`` while
    the step that skips it does not.
    """
    pts = np.asarray(points)
    if len(pts) <= 2:
        return pts
    steps = np.hypot(*np.diff(pts, axis=0).T)
    # nothing can be a spike unless two consecutive steps are long
    if not np.any((steps[:-1] > max_step) & (steps[1:] > max_step)):
        return pts
    kept = [pts[0]]
    for i in range(1, len(pts) - 1):
        prev, p, nxt = kept[-1], pts[i], pts[i + 1]
        d_in = np.hypot(*(p - prev))
        d_out = np.hypot(*(nxt - p))
        if d_in > max_step and d_out > max_step and np.hypot(*(nxt - prev)) <= max_step:
            continue
        kept.append(p)
    kept.append(pts[-1])
    return np.array(kept)


def simplify(points: np.ndarray, eps: float) -> np.ndarray:
    if eps <= 0 or len(points) <= 2:
        return np.asarray(points)
    line = LineString(points).simplify(eps, preserve_topology=False)
    out = np.asarray(line.coords)
    if len(out) < 2:
        return np.asarray(points)[[0, -1]]
    return out


def preprocess(tset: TrajectorySet, cfg: PreprocessConfig = PreprocessConfig()) -> TrajectorySet:
    """Noise filtering, compression and merging of near-duplicate trajectories."""
    trajs = sorted(tset.trajectories, key=lambda t: t.id)
    cleaned = []
    for t in trajs:
        pts = filter_spikes(t.points, cfg.max_step)
        pts = simplify(pts, cfg.simplify_eps)
        cleaned.append(Trajectory(t.id, pts, t.weight))
    if len(cleaned) < 2 or cfg.merge_eps <= 0:
        return TrajectorySet(tuple(cleaned), tset.scene_bounds, tset.normalized)

    stack = np.stack([resample_points(t.points, cfg.control_points) for t in cleaned])
    dist = pairwise_dtw(stack)
    consumed = np.zeros(len(cleaned), dtype=bool)
    out = []
    for i, t in enumerate(cleaned):
        if consumed[i]:
            continue
        group = [i] + [j for j in range(i + 1, len(cleaned)) if not consumed[j] and dist[i, j] < cfg.merge_eps]
        if len(group) == 1:
            out.append(t)
            continue
        consumed[group] = True
        w = np.array([cleaned[g].weight for g in group], dtype=np.float64)
        mean = np.tensordot(w / w.sum(), stack[group], axes=1)
        out.append(Trajectory(t.id, mean, int(w.sum())))
    return TrajectorySet(tuple(out), tset.scene_bounds, tset.normalized)


# ---------------------------------------------------------------- JSON I/O


def trajectories_to_dict(tset: TrajectorySet) -> dict:
    doc = {
        "trajectories": [
            {"id": t.id, "points": t.points.tolist(), "weight": t.weight} for t in tset.trajectories
        ]
    }
    if tset.normalized:
        doc["normalized"] = True
    return doc


def trajectories_from_dict(doc: Mapping) -> TrajectorySet:
    if not isinstance(doc, Mapping) or "trajectories" not in doc:
        raise ParseError("missing top-level key", field="trajectories")
    raw = doc["trajectories"]
    if not isinstance(raw, list):
        raise ParseError("expected a list", field="trajectories")
    trajs = []
    for i, item in enumerate(raw):
        where = f"trajectories[{i}]"
        if not isinstance(item, Mapping):
            raise ParseError("expected an object", field=where)
        for key in ("id", "points"):
            if key not in item:
                raise ParseError("missing key", field=f"{where}.{key}")
        try:
            pts = np.asarray(item["points"], dtype=np.float64)
        except (TypeError, ValueError):
            raise ParseError("points must be [[x, y], ...]", field=f"{where}.points") from None
        try:
            trajs.append(Trajectory(str(item["id"]), pts, item.get("weight", 1)))
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), field=where) from None
    if not trajs:
        raise ParseError("no trajectories", field="trajectories")
    try:
        return TrajectorySet(tuple(trajs), None, bool(doc.get("normalized", False)))
    except ValueError as exc:
        raise ParseError(str(exc), field="trajectories") from None


def load_json(path: str | Path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None


def load_trajectories(path: str | Path) -> TrajectorySet:
    return trajectories_from_dict(load_json(path))


def ensure_normalized(tset: TrajectorySet) -> TrajectorySet:
    return tset if tset.normalized else normalize(tset)
