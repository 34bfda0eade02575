"""Synthetic trajectory datasets with a known global trend and known hotspots.

Pipeline: a smooth B-spline trend, two or three hotspots sampled along it,
one side branch per hotspot, then objects routed along trend/branch pieces
with smooth per-object noise. Every object path is an offset curve of the
trend, parameterized by trend arc length.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .core import Trajectory, TrajectorySet, normalize
from .errors import GenerationFailed

ASSIGNMENTS = {
    "1conv+1div": ("convergence", "divergence"),
    "2conv+1div": ("convergence", "convergence", "divergence"),
    "1conv+2div": ("convergence", "divergence", "divergence"),
}
DEFAULT_RADIUS = 9 / 1250
MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SynthConfig:
    trend_bends: int = 1
    hotspot_assignment: str = "1conv+1div"
    trajectory_count: int = 30
    perturbation_scale: float = 0.01
    seed: int = 42
    branch_offset: float = 0.15
    branch_ramp: float = 0.08
    endpoint_taper: float = 0.1
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if self.trend_bends not in (1, 2):
            raise ValueError("trend_bends must be 1 or 2")
        if self.hotspot_assignment not in ASSIGNMENTS:
            raise ValueError(f"hotspot_assignment must be one of {sorted(ASSIGNMENTS)}")
        if self.trajectory_count < 2:
            raise ValueError("trajectory_count must be >= 2")
        if self.perturbation_scale < 0:
            raise ValueError("perturbation_scale must be >= 0")


@dataclass(frozen=True)
class Trend:
    control_points: np.ndarray
    polyline: np.ndarray

    def __post_init__(self):
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1))])
        object.__setattr__(self, "arc", cum)

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def at(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        return np.stack([np.interp(s, self.arc, self.polyline[:, 0]), np.interp(s, self.arc, self.polyline[:, 1])], axis=-1)

    def normal(self, s) -> np.ndarray:
        h = 1e-4 * self.length
        s = np.asarray(s, dtype=np.float64)
        tan = self.at(np.minimum(s + h, self.length)) - self.at(np.maximum(s - h, 0.0))
        tan /= np.linalg.norm(tan, axis=-1, keepdims=True)
        return np.stack([-tan[..., 1], tan[..., 0]], axis=-1)


@dataclass(frozen=True)
class TruthHotspot:
    position: np.ndarray
    kind: str
    arc: float


@dataclass(frozen=True)
class SynthDataset:
    trajectories: TrajectorySet
    truth_trend: np.ndarray
    truth_hotspots: list[TruthHotspot]
    config: SynthConfig


def _angle(a, b, c) -> float:
    u, v = a - b, c - b
    cos = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def control_angles(ctrl: np.ndarray) -> list[float]:
    return [_angle(ctrl[i - 1], ctrl[i], ctrl[i + 1]) for i in range(1, len(ctrl) - 1)]


def _bspline(ctrl: np.ndarray, samples: int = 400) -> np.ndarray:
    n = len(ctrl)
    deg = min(3, n - 1)
    knots = np.concatenate([np.zeros(deg), np.linspace(0, 1, n - deg + 1), np.ones(deg)])
    return BSpline(knots, ctrl, deg)(np.linspace(0, 1, samples))


def gen_trend(bends: int, seed: int) -> Trend:
    if bends not in (1, 2):
        raise ValueError("bends must be 1 or 2")
    rng = np.random.default_rng([seed, 0])
    for _ in range(MAX_ATTEMPTS):
        start, end = rng.uniform(0.05, 0.95, size=(2, 2))
        chord = end - start
        if np.linalg.norm(chord) < 0.6:
            continue
        perp = np.array([-chord[1], chord[0]])
        fracs = np.sort(rng.uniform(0.2, 0.8, size=bends))
        sides = rng.uniform(-0.3, 0.3, size=bends)
        inner = start + fracs[:, None] * chord + sides[:, None] * perp
        ctrl = np.vstack([start, inner, end])
        if min(control_angles(ctrl)) > 135.0:
            return Trend(ctrl, _bspline(ctrl))
    raise GenerationFailed("no trend satisfied the angle constraint")


def _kind_orders(assignment: str) -> list[tuple[str, ...]]:
    """Orderings of the assigned kinds in which some convergence precedes every divergence."""
    kinds = ASSIGNMENTS[assignment]
    orders = sorted(set(itertools.permutations(kinds)))
    return [o for o in orders if o[0] == "convergence"]


def gen_hotspots(trend: Trend, assignment: str, seed: int) -> list[TruthHotspot]:
    if trend.length <= 0:
        raise ValueError("trend has zero length")
    rng = np.random.default_rng([seed, 1])
    orders = _kind_orders(assignment)
    order = orders[int(rng.integers(len(orders)))]
    n = len(order)
    L = trend.length
    for _ in range(MAX_ATTEMPTS):
        fr = np.sort(rng.uniform(0.25, 0.75, size=n))
        if n == 1 or np.min(np.diff(fr)) >= 0.2:
            break
    else:  # pragma: no cover - the window always admits 3 picks eventually
        raise GenerationFailed("could not space hotspots")
    arcs = fr * L
    return [TruthHotspot(trend.at(a), k, float(a)) for a, k in zip(arcs, order)]


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _route_options(hotspots: list[TruthHotspot], L: float):
    """Start options (entry arc, conv hotspot index) and end options (exit arc, div index)."""
    arcs = [h.arc for h in hotspots]
    starts, ends = [(0.0, None)], [(L, None)]
    for i, h in enumerate(hotspots):
        if h.kind == "convergence":
            starts.append((arcs[i - 1] if i > 0 else 0.0, i))
        else:
            ends.append((arcs[i + 1] if i + 1 < len(arcs) else L, i))
    return starts, ends


def _assign_routes(hotspots, L, count, rng):
    starts, ends = _route_options(hotspots, L)
    arcs = [h.arc for h in hotspots]
    valid = [
        (si, ei)
        for si, (_, ch) in enumerate(starts)
        for ei, (_, dh) in enumerate(ends)
        if (ch is None or dh is None or arcs[ch] < arcs[dh])
    ]
    for _ in range(MAX_ATTEMPTS):
        picks = [valid[int(rng.integers(len(valid)))] for _ in range(count)]
        ok = True
        for i, h in enumerate(hotspots):
            on_branch = sum(
                1 for si, ei in picks if (starts[si][1] == i or ends[ei][1] == i)
            )
            through = 0
            for si, ei in picks:
                ch, dh = starts[si][1], ends[ei][1]
                enter = arcs[ch] if ch is not None else 0.0
                leave = arcs[dh] if dh is not None else L
                if ch != i and dh != i and enter < h.arc < leave:
                    through += 1
            if on_branch < 2 or through < 2:
                ok = False
                break
        if ok:
            return picks, starts, ends
    raise GenerationFailed("could not route objects through every hotspot")


def _path(trend, hotspots, sides, cfg, start_opt, end_opt, noise, scatter0, scatter1, samples=120):
    s0, ch = start_opt
    s1, dh = end_opt
    s = np.linspace(s0, s1, samples)
    extra = [h.arc for h in hotspots if s0 < h.arc < s1]
    s = np.unique(np.concatenate([s, extra]))
    base = trend.at(s)
    nrm = trend.normal(s)
    off = np.zeros_like(base)
    if ch is not None:
        w = _smoothstep((hotspots[ch].arc - s) / cfg.branch_ramp)
        off += (sides[ch] * cfg.branch_offset * w)[:, None] * nrm
    if dh is not None:
        w = _smoothstep((s - hotspots[dh].arc) / cfg.branch_ramp)
        off += (sides[dh] * cfg.branch_offset * w)[:, None] * nrm
    amp, freq, phase = noise
    u = (s - s0) / max(s1 - s0, 1e-12)
    wobble = amp[None, :] * np.sin(2 * np.pi * freq[None, :] * u[:, None] + phase[None, :])
    taper0 = 1.0 - _smoothstep((s - s0) / cfg.endpoint_taper)
    taper1 = 1.0 - _smoothstep((s1 - s) / cfg.endpoint_taper)
    pts = base + off + wobble + taper0[:, None] * scatter0 + taper1[:, None] * scatter1
    return pts


def gen_trajectories(trend: Trend, hotspots: list[TruthHotspot], cfg: SynthConfig) -> SynthDataset:
    rng = np.random.default_rng([cfg.seed, 2])
    L = trend.length
    sides = [1.0 if i % 2 == 0 else -1.0 for i in range(len(hotspots))]
    picks, starts, ends = _assign_routes(hotspots, L, cfg.trajectory_count, rng)

    start_load = {si: sum(1 for p in picks if p[0] == si) for si in range(len(starts))}
    end_load = {ei: sum(1 for p in picks if p[1] == ei) for ei in range(len(ends))}
    min_sep = 2.0 * cfg.radius

    placed: list[np.ndarray] = []
    trajs = []
    for n, (si, ei) in enumerate(picks):
        amp = cfg.perturbation_scale * np.ones(2)
        freq = rng.uniform(0.5, 1.5, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        rho0 = cfg.radius * (2.0 * np.sqrt(start_load[si]) + 1.0)
        rho1 = cfg.radius * (2.0 * np.sqrt(end_load[ei]) + 1.0)
        for _ in range(MAX_ATTEMPTS):
            scat = []
            for rho in (rho0, rho1):
                ang = rng.uniform(0, 2 * np.pi)
                rad = rho * np.sqrt(rng.uniform())
                scat.append(rad * np.array([np.cos(ang), np.sin(ang)]))
            pts = _path(trend, hotspots, sides, cfg, starts[si], ends[ei], (amp, freq, phase), scat[0], scat[1])
            a, b = pts[0], pts[-1]
            if np.linalg.norm(a - b) < min_sep:
                continue
            if placed and min(np.linalg.norm(np.array(placed) - a, axis=1).min(), np.linalg.norm(np.array(placed) - b, axis=1).min()) < min_sep:
                continue
            placed.extend([a, b])
            trajs.append(Trajectory(f"t{n:03d}", pts))
            break
        else:
            raise GenerationFailed("start/end positions could not be separated")

    raw = TrajectorySet(tuple(trajs))
    tset = normalize(raw)
    bounds = tset.scene_bounds
    truth = [TruthHotspot(bounds.to_unit(h.position), h.kind, h.arc / bounds.extent) for h in hotspots]
    return SynthDataset(tset, bounds.to_unit(trend.polyline), truth, cfg)


def generate(cfg: SynthConfig) -> SynthDataset:
    trend = gen_trend(cfg.trend_bends, cfg.seed)
    hotspots = gen_hotspots(trend, cfg.hotspot_assignment, cfg.seed)
    return gen_trajectories(trend, hotspots, cfg)


def standard_configs(seeds=(42, 43), **overrides) -> list[SynthConfig]:
    """The 2 trends x 3 hotspot assignments grid, once per seed."""
    return [
        SynthConfig(trend_bends=b, hotspot_assignment=a, seed=s, **overrides)
        for s in seeds
        for b in (1, 2)
        for a in ASSIGNMENTS
    ]


def dataset_to_dict(ds: SynthDataset) -> dict:
    from .core import trajectories_to_dict

    doc = trajectories_to_dict(ds.trajectories)
    doc["truth"] = {
        "trend": ds.truth_trend.tolist(),
        "hotspots": [{"position": h.position.tolist(), "kind": h.kind} for h in ds.truth_hotspots],
    }
    return doc
