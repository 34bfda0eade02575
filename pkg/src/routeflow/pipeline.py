"""End-to-end animation pipeline, the straight-line baseline and run manifests."""

from __future__ import annotations

import hashlib
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .bundling import BundleHierarchy, bundle_hierarchy
from .config import PipelineConfig
from .core import TrajectorySet, ensure_normalized, preprocess
from .errors import RouteFlowError, StageError
from .hotspots import HotspotGraph, extract_hotspots, layout_order
from .layout import LayoutPlan, build_layout_plan
from .metrics import GroupAssignment
from .timing import (
    FrameSet,
    SpeedResult,
    add_dwell,
    build_paths,
    departure_id,
    enforce_speed_ratio,
    repair_monotone,
    sample_frames,
    scanline_times,
)

PATH_STAGES = ("preprocess", "bundling", "hotspots")
LAYOUT_STAGES = ("layout", "timing", "sampling")


@dataclass(frozen=True)
class GroupInfo:
    members: tuple[str, ...]
    hotspots: tuple[str, ...]
    hotspot_times: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"members": list(self.members), "hotspots": list(self.hotspots), "hotspot_times": list(self.hotspot_times)}


@dataclass
class RunResult:
    frames: FrameSet
    groups: list[GroupInfo]
    durations: dict[str, float]
    processed: TrajectorySet
    hierarchy: BundleHierarchy | None = None
    graph: HotspotGraph | None = None
    plan: LayoutPlan | None = None
    speed: SpeedResult | None = None
    node_times: dict[str, float] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    def assignment(self) -> GroupAssignment:
        return group_assignment(self.groups, self.frames)

    def bundled_paths(self) -> dict[str, np.ndarray]:
        if self.hierarchy is None:
            return {t.id: t.points for t in self.processed}
        return {oid: p.current for oid, p in self.hierarchy.final_paths.items()}


class _Stages:
    def __init__(self):
        self.durations: dict[str, float] = {}

    @contextmanager
    def run(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            err = StageError(name, exc)
            if isinstance(exc, RouteFlowError):
                err.category = exc.category
            raise err from exc
        finally:
            self.durations[name] = self.durations.get(name, 0.0) + time.perf_counter() - t0


# ---------------------------------------------------------------- groups


def compute_groups(g: HotspotGraph, node_times: dict[str, float]) -> list[GroupInfo]:
    """Partition objects into groups that travel one hotspot-to-hotspot edge together.

    Whole itineraries almost never coincide, so groups come from shared
    edges instead. Edges are taken greedily by members x travel time; each
    claims its still-unassigned members when at least two remain. Every
    other object forms a group of its own with no active frames.
    """
    cands = []
    for eid, e in g.edges.items():
        if g.nodes[e.tail].role != "hotspot" or g.nodes[e.head].role != "hotspot" or len(e.members) < 2:
            continue
        dur = node_times[e.head] - node_times.get(departure_id(e.tail), node_times[e.tail])
        cands.append((-len(e.members) * dur, -dur, eid))
    taken: set[str] = set()
    out = []
    for _, _, eid in sorted(cands):
        e = g.edges[eid]
        free = sorted(e.members - taken)
        if len(free) < 2:
            continue
        taken.update(free)
        t0 = node_times.get(departure_id(e.tail), node_times[e.tail])
        out.append(GroupInfo(tuple(free), (e.tail, e.head), (float(t0), float(node_times[e.head]))))
    for oid in g.object_ids:
        if oid not in taken:
            out.append(GroupInfo((oid,), (), ()))
    return sorted(out, key=lambda gi: gi.members)


def group_assignment(groups: list[GroupInfo], frames: FrameSet) -> GroupAssignment:
    """Active frames of a group run from its first to its last hotspot time."""
    active = []
    for gi in groups:
        if gi.hotspot_times:
            lo, hi = min(gi.hotspot_times), max(gi.hotspot_times)
            active.append(np.flatnonzero((frames.times >= lo) & (frames.times <= hi)))
        else:
            active.append(np.zeros(0, dtype=np.int64))
    return GroupAssignment([gi.members for gi in groups], active)


def inner_frames(gi: GroupInfo, frames: FrameSet) -> np.ndarray:
    """Frame indices strictly between a group's first and last hotspot times."""
    if len(gi.hotspot_times) < 2:
        return np.zeros(0, dtype=np.int64)
    lo, hi = min(gi.hotspot_times), max(gi.hotspot_times)
    return np.flatnonzero((frames.times > lo) & (frames.times < hi))


# ---------------------------------------------------------------- runs


def run_pipeline(tset: TrajectorySet, cfg: PipelineConfig = PipelineConfig()) -> RunResult:
    stages = _Stages()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        with stages.run("preprocess"):
            processed = preprocess(ensure_normalized(tset), cfg.preprocess)
        with stages.run("bundling"):
            hierarchy = bundle_hierarchy(processed, cfg.bundling)
        with stages.run("hotspots"):
            graph = extract_hotspots(hierarchy, cfg.hotspots.unify_radius)
            order = layout_order(graph)
        with stages.run("layout"):
            plan = build_layout_plan(graph, order, cfg.layout.radius, cfg.layout)
        with stages.run("timing"):
            times = repair_monotone(graph, scanline_times(graph, plan))
            times = add_dwell(times, plan.arrivals, cfg.timing.dwell)
            paths = build_paths(graph, times)
            speed = enforce_speed_ratio(
                paths, cfg.timing.max_speed_iterations, cfg.seed, cfg.timing.speed_limit
            )
            node_times = _node_times(speed)
        with stages.run("sampling"):
            frames = sample_frames(speed.paths, cfg.frame_count, cfg.timing.easing, plan)
            groups = compute_groups(graph, node_times)
            frames.groups = [list(gi.members) for gi in groups]
    messages = [str(w.message) for w in caught]
    if not speed.converged:
        messages.append(
            f"speed ratio {speed.ratio:.4g} still above {cfg.timing.speed_limit} after "
            f"{speed.iterations} iterations (started at {speed.initial_ratio:.4g})"
        )
    return RunResult(frames, groups, stages.durations, processed, hierarchy, graph, plan, speed, node_times, messages)


def _node_times(speed: SpeedResult) -> dict[str, float]:
    out = {}
    for p in speed.paths:
        for kp in p.keypoints:
            if kp.node_id is not None:
                out[kp.node_id] = kp.time
    return out


def run_baseline(tset: TrajectorySet, cfg: PipelineConfig = PipelineConfig()) -> RunResult:
    """Control condition: every object moves on a straight line from start to end."""
    stages = _Stages()
    with stages.run("preprocess"):
        processed = preprocess(ensure_normalized(tset), cfg.preprocess)
    with stages.run("sampling"):
        ordered = sorted(processed.trajectories, key=lambda t: t.id)
        grid = np.linspace(0.0, 1.0, cfg.frame_count)
        start = np.array([t.start for t in ordered])
        end = np.array([t.end for t in ordered])
        pos = start[None] + grid[:, None, None] * (end - start)[None]
        pos[-1] = end
        frames = FrameSet([t.id for t in ordered], grid, pos, cfg.layout.radius)
    return RunResult(frames, [], stages.durations, processed)


def warm_up() -> float:
    """Compile the numba kernels on a tiny scene; returns seconds spent."""
    from .synthgen import SynthConfig, generate

    from .layout import _greedy_place
    from .metrics import rasterize

    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = PipelineConfig(frame_count=4)
        run_pipeline(generate(SynthConfig(trajectory_count=6)).trajectories, cfg)
    # kernels a tiny scene may never reach
    discs = np.zeros((2, 2))
    _greedy_place(discs, np.arange(3, dtype=np.int64), discs.copy(), np.arange(2, dtype=np.int64), 1.0, 4)
    rasterize([np.array([[0.1, 0.1], [0.9, 0.5]])], 64)
    return time.perf_counter() - t0


# ---------------------------------------------------------------- manifest


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    input_hash: str
    config_hash: str
    seed: int
    version: str
    started: str
    finished: str
    durations: dict[str, float]
    total_seconds: float
    warm_up_seconds: float = 0.0
    messages: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def path_generation(self) -> float:
        return sum(v for k, v in self.durations.items() if k in PATH_STAGES)

    @property
    def layout_generation(self) -> float:
        return sum(v for k, v in self.durations.items() if k in LAYOUT_STAGES)

    def to_dict(self) -> dict:
        return {
            "input_hash": self.input_hash,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "stage_seconds": dict(self.durations),
            "path_generation_seconds": self.path_generation,
            "layout_generation_seconds": self.layout_generation,
            "total_seconds": self.total_seconds,
            "warm_up_seconds": self.warm_up_seconds,
            "messages": list(self.messages),
            **self.extra,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def timed_run(tset: TrajectorySet, cfg: PipelineConfig, input_bytes: bytes, baseline: bool = False, warm: bool = True):
    """Run the pipeline (or baseline) and build its manifest."""
    warm_s = warm_up() if warm and not baseline else 0.0
    started = _now()
    t0 = time.perf_counter()
    result = run_baseline(tset, cfg) if baseline else run_pipeline(tset, cfg)
    total = time.perf_counter() - t0
    extra = {"method": "straight" if baseline else "routeflow", "objects": len(result.frames.ids)}
    if result.speed is not None:
        extra["speed_ratio"] = {
            "initial": result.speed.initial_ratio,
            "final": result.speed.ratio,
            "iterations": result.speed.iterations,
            "converged": result.speed.converged,
        }
    manifest = RunManifest(
        sha256_bytes(input_bytes),
        cfg.digest(),
        cfg.seed,
        __version__,
        started,
        _now(),
        result.durations,
        total,
        warm_s,
        result.messages,
        extra,
    )
    return result, manifest


# ---------------------------------------------------------------- frame documents


def frames_to_dict(result: RunResult) -> dict:
    f = result.frames
    return {
        "radius": f.radius,
        "frame_count": f.frame_count,
        "frames": [
            {"t": float(t), "objects": {oid: [float(v) for v in f.positions[k, i]] for i, oid in enumerate(f.ids)}}
            for k, t in enumerate(f.times)
        ],
        "groups": [gi.to_dict() for gi in result.groups],
    }
