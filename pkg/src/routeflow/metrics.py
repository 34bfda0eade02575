"""Animation-quality and bundling metrics.

Occlusion, deformation and dispersion are evaluated over a FrameSet and a
group assignment. Deviation and ink ratio compare bundled paths with the
original trajectories.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numba
import numpy as np

from .core import TrajectorySet, dtw, resample_points
from .errors import DegenerateInk, IdMismatch
from .timing import FrameSet

OVERLAP_EPS = 1e-9


class MetricsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GroupAssignment:
    groups: list[tuple[str, ...]]
    active_frames: list[np.ndarray]

    def __post_init__(self):
        if len(self.groups) != len(self.active_frames):
            raise ValueError("one frame set per group is required")
        seen: set[str] = set()
        for g in self.groups:
            if seen.intersection(g):
                raise ValueError("groups must be disjoint")
            seen.update(g)

    def validate(self, frames: FrameSet) -> None:
        missing = set(frames.ids) - {o for g in self.groups for o in g}
        extra = {o for g in self.groups for o in g} - set(frames.ids)
        if missing or extra:
            raise IdMismatch(f"group ids differ from frame ids ({len(missing)} missing, {len(extra)} unknown)")
        for a in self.active_frames:
            if len(a) and (a.min() < 0 or a.max() >= frames.frame_count):
                raise ValueError("active frame index out of range")


@dataclass(frozen=True)
class RasterConfig:
    resolution: int = 1000

    def __post_init__(self):
        if self.resolution < 64:
            raise ValueError("raster resolution must be at least 64")


@dataclass(frozen=True)
class MetricsReport:
    occlusion_overall: float | None
    occlusion_within: float
    deformation: float
    dispersion: float
    deviation: float | None = None
    ink_ratio: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def overlap(p, q, radius: float) -> int:
    if radius <= 0:
        raise ValueError("radius must be positive")
    d = float(np.hypot(*(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))))
    return int(d < 2.0 * radius - OVERLAP_EPS)


def _pair_dist(pos: np.ndarray) -> np.ndarray:
    """(frames, n, n) center distances."""
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def _pair_frac(mask: np.ndarray) -> np.ndarray:
    """Per-frame fraction of ordered pairs flagged in an (F, n, n) mask, diagonal excluded."""
    n = mask.shape[1]
    off = ~np.eye(n, dtype=bool)
    return (mask & off).sum(axis=(1, 2)) / (n * (n - 1))


def occlusion_overall(f: FrameSet, radius: float) -> float | None:
    """None when fewer than two objects make the metric undefined."""
    n = len(f.ids)
    if n < 2:
        return None
    d = _pair_dist(f.positions)
    return float(_pair_frac(d < 2.0 * radius - OVERLAP_EPS).mean())


def _group_terms(f: FrameSet, g: GroupAssignment):
    index = {oid: i for i, oid in enumerate(f.ids)}
    for members, frames in zip(g.groups, g.active_frames):
        if len(members) < 2 or len(frames) == 0:
            continue
        cols = [index[o] for o in members]
        yield cols, np.asarray(frames, dtype=np.int64)


def _mean_over_groups(values: list[float], what: str) -> float:
    if not values:
        warnings.warn(f"no group with two or more members; {what} is 0", MetricsWarning)
        return 0.0
    return float(np.mean(values))


def occlusion_within(f: FrameSet, g: GroupAssignment, radius: float) -> float:
    vals = []
    for cols, frames in _group_terms(f, g):
        d = _pair_dist(f.positions[np.ix_(frames, cols)])
        vals.append(float(_pair_frac(d < 2.0 * radius - OVERLAP_EPS).mean()))
    return _mean_over_groups(vals, "within-group occlusion")


def deformation(f: FrameSet, g: GroupAssignment) -> float:
    """Sum over active frames t > 0 of the mean pair-distance change from t-1, over |T_G|."""
    vals = []
    for cols, frames in _group_terms(f, g):
        n = len(cols)
        off = ~np.eye(n, dtype=bool)
        cur = frames[frames > 0]
        total = 0.0
        if len(cur):
            now = _pair_dist(f.positions[np.ix_(cur, cols)])
            before = _pair_dist(f.positions[np.ix_(cur - 1, cols)])
            total = float((np.abs(now - before) * off).sum(axis=(1, 2)).sum() / (n * (n - 1)))
        vals.append(total / len(frames))
    return _mean_over_groups(vals, "deformation")


def dispersion(f: FrameSet, g: GroupAssignment) -> float:
    vals = []
    for cols, frames in _group_terms(f, g):
        n = len(cols)
        d = _pair_dist(f.positions[np.ix_(frames, cols)])
        vals.append(float((d.sum(axis=(1, 2)) / (n * (n - 1))).mean()))
    return _mean_over_groups(vals, "dispersion")


# ---------------------------------------------------------------- bundling metrics


def _as_paths(paths) -> dict[str, np.ndarray]:
    if isinstance(paths, TrajectorySet):
        return {t.id: t.points for t in paths}
    out = {}
    for k, v in paths.items():
        out[k] = np.asarray(getattr(v, "current", v), dtype=np.float64)
    return out


def deviation(original, bundled, control_points: int = 32) -> float:
    """Mean DTW between each bundled path and its original, both resampled to C points."""
    a, b = _as_paths(original), _as_paths(bundled)
    if set(a) != set(b):
        raise IdMismatch("original and bundled path ids differ")
    if not a:
        raise IdMismatch("no paths to compare")
    total = 0.0
    for oid in sorted(a):
        total += dtw(resample_points(a[oid], control_points), resample_points(b[oid], control_points))
    return total / len(a)


@numba.njit(cache=True)
def _stroke(grid, cells):
    for k in range(cells.shape[0] - 1):
        x0, y0 = cells[k, 0], cells[k, 1]
        x1, y1 = cells[k + 1, 0], cells[k + 1, 1]
        dx = abs(x1 - x0)
        dy = -abs(y1 - y0)
        sx = 1 if x0 < x1 else -1
        sy = 1 if y0 < y1 else -1
        err = dx + dy
        while True:
            grid[y0, x0] = True
            if x0 == x1 and y0 == y1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x0 += sx
            if e2 <= dx:
                err += dx
                y0 += sy
    if cells.shape[0] == 1:
        grid[cells[0, 1], cells[0, 0]] = True


def rasterize(paths: Sequence[np.ndarray], resolution: int) -> np.ndarray:
    """Boolean R x R grid of cells touched by 1-cell Bresenham strokes."""
    grid = np.zeros((resolution, resolution), dtype=np.bool_)
    for p in paths:
        cells = np.clip(np.floor(np.asarray(p, dtype=np.float64) * resolution), 0, resolution - 1)
        _stroke(grid, cells.astype(np.int64))
    return grid


def ink(paths, raster: RasterConfig = RasterConfig()) -> int:
    return int(rasterize(list(_as_paths(paths).values()), raster.resolution).sum())


def ink_ratio(original, bundled, raster: RasterConfig = RasterConfig()) -> float:
    base = ink(original, raster)
    if base == 0:
        raise DegenerateInk("original paths cover no raster cells")
    return ink(bundled, raster) / base


def frames_report(
    f: FrameSet, g: GroupAssignment, radius: float, original=None, bundled=None, raster=RasterConfig()
) -> MetricsReport:
    g.validate(f)
    dev = ink_r = None
    if original is not None and bundled is not None:
        dev = deviation(original, bundled)
        ink_r = ink_ratio(original, bundled, raster)
    return MetricsReport(
        occlusion_overall(f, radius),
        occlusion_within(f, g, radius),
        deformation(f, g),
        dispersion(f, g),
        dev,
        ink_r,
    )

