import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routeflow.core import (
    ControlPolyline,
    PreprocessConfig,
    Trajectory,
    TrajectorySet,
    build_compatibility,
    compatibility_matrix,
    dtw,
    filter_spikes,
    normalize,
    pairwise_dtw,
    preprocess,
    resample,
    resample_points,
    trajectories_from_dict,
    trajectories_to_dict,
)
from routeflow.errors import DegenerateExtent, EmptyIndex, EmptyInput, ParseError

from oracles import brute_dtw


def tset(*paths, normalized=False):
    return TrajectorySet(tuple(Trajectory(f"t{i}", p) for i, p in enumerate(paths)), normalized=normalized)


coord = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
point = st.tuples(coord, coord)


def seq(max_len):
    return st.lists(point, min_size=1, max_size=max_len)


# ---------------------------------------------------------------- normalize


def test_normalize_square_maps_to_unit():
    out = normalize(tset([(0, 0), (100, 100)], [(0, 100), (100, 0)]))
    pts = np.vstack([t.points for t in out])
    assert pts.min() == 0.0 and pts.max() == 1.0
    assert out.normalized


def test_normalize_uniform_scale():
    out = normalize(tset([(0, 0), (4, 4)], [(2, 2), (2, 2.0001)]))
    np.testing.assert_allclose(out.by_id()["t1"].points, np.array([(2, 2), (2, 2.0001)]) / 4, atol=1e-15)


def test_normalize_wide_box_centres_short_axis():
    out = normalize(tset([(0, 0), (200, 100)]))
    pts = out.trajectories[0].points
    assert pts[:, 0].min() == 0.0 and pts[:, 0].max() == 1.0
    assert pts[:, 1].min() == pytest.approx(0.25, abs=1e-15)
    assert pts[:, 1].max() == pytest.approx(0.75, abs=1e-15)


def test_normalize_round_trip():
    raw = tset([(3, -1), (10, 5), (7, 2)])
    out = normalize(raw)
    back = out.scene_bounds.to_original(out.trajectories[0].points)
    np.testing.assert_allclose(back, raw.trajectories[0].points, atol=1e-12)


def test_normalize_errors():
    with pytest.raises(EmptyInput):
        normalize(TrajectorySet(()))
    with pytest.raises(DegenerateExtent):
        normalize(tset([(1, 1), (1, 1)]))


# ---------------------------------------------------------------- resample


def test_resample_straight_midpoint():
    cp = resample(Trajectory("a", [(0, 0), (1, 0)]), 3)
    np.testing.assert_allclose(cp.current, [(0, 0), (0.5, 0), (1, 0)], atol=1e-15)


def test_resample_l_path_arc_midpoint():
    cp = resample(Trajectory("a", [(0, 0), (1, 0), (1, 1)]), 3)
    np.testing.assert_allclose(cp.current, [(0, 0), (1, 0), (1, 1)], atol=1e-15)


def test_resample_two_points_are_endpoints():
    t = Trajectory("a", [(0.1, 0.2), (0.5, 0.9), (0.3, 0.3)])
    cp = resample(t, 2)
    assert np.array_equal(cp.current, t.points[[0, -1]])


def test_resample_degenerate():
    cp = resample(Trajectory("a", [(0.4, 0.4), (0.4, 0.4)]), 5)
    assert cp.degenerate
    assert np.array_equal(cp.current, np.full((5, 2), 0.4))


@settings(max_examples=60, deadline=None)
@given(st.lists(point, min_size=2, max_size=8, unique=True), st.integers(2, 20))
def test_resample_endpoints_and_idempotence(pts, C):
    pts = np.array(pts)
    if np.linalg.norm(np.diff(pts, axis=0), axis=1).sum() == 0:
        return
    out = resample_points(pts, C)
    assert np.array_equal(out[0], pts[0]) and np.array_equal(out[-1], pts[-1])
    uniform = resample_points(np.array([[0.0, 0.0], [1.0, 2.0]]), C)
    assert np.abs(resample_points(uniform, C) - uniform).max() < 1e-9


# ---------------------------------------------------------------- dtw


def test_dtw_examples():
    assert dtw([(0, 0), (1, 0)], [(0, 0), (1, 0)]) == 0.0
    assert dtw([(0, 0)], [(3, 4)]) == 5.0
    assert dtw([(0, 0), (2, 0)], [(0, 0), (1, 0), (2, 0)]) == 1.0


def test_dtw_empty():
    with pytest.raises(EmptyInput):
        dtw([], [(0, 0)])


@settings(max_examples=150, deadline=None)
@given(seq(5), seq(5))
def test_dtw_matches_enumeration(a, b):
    assert abs(dtw(a, b) - brute_dtw(a, b)) <= 1e-12 * max(1.0, brute_dtw(a, b))


@settings(max_examples=100, deadline=None)
@given(seq(8), seq(8))
def test_dtw_symmetric_nonnegative(a, b):
    d = dtw(a, b)
    assert d >= 0.0
    assert d == pytest.approx(dtw(b, a), abs=1e-12)
    assert dtw(a, a) == 0.0


def test_pairwise_dtw_matches_single_calls():
    rng = np.random.default_rng(0)
    stack = rng.random((5, 6, 2))
    mat = pairwise_dtw(stack)
    for i in range(5):
        for j in range(5):
            assert mat[i, j] == pytest.approx(dtw(stack[i], stack[j]), abs=1e-15)


# ---------------------------------------------------------------- compatibility


def test_compatibility_min_max():
    dist = np.array([[0, 2, 4], [2, 0, 6], [4, 6, 0]], dtype=float)
    comp = compatibility_matrix(dist)
    assert comp[0, 1] == 1.0 and comp[0, 2] == 0.5 and comp[1, 2] == 0.0


def test_compatibility_all_equal_is_one():
    dist = np.full((3, 3), 5.0)
    np.fill_diagonal(dist, 0)
    comp = compatibility_matrix(dist)
    assert np.all(comp[~np.eye(3, dtype=bool)] == 1.0)


def _polylines(rng, n, C=6):
    out = []
    for i in range(n):
        p = rng.random((C, 2))
        out.append(ControlPolyline(f"p{i}", p, p))
    return out


def test_compatibility_k_cardinality_and_ties():
    idx = build_compatibility(_polylines(np.random.default_rng(1), 4), 2)
    assert all(len(v) == 2 for v in idx.neighbors.values())
    same = [ControlPolyline(f"p{i}", np.zeros((3, 2)), np.zeros((3, 2))) for i in (2, 0, 1)]
    assert build_compatibility(same, 2).neighbor_ids("p2") == ["p0", "p1"]


def test_compatibility_needs_two():
    with pytest.raises(EmptyIndex):
        build_compatibility(_polylines(np.random.default_rng(2), 1), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 7), st.integers(0, 10_000))
def test_compatibility_range(n, seed):
    stack = np.random.default_rng(seed).random((n, 5, 2))
    comp = compatibility_matrix(pairwise_dtw(stack))
    vals = comp[np.triu_indices(n, 1)]
    assert np.all((vals >= 0) & (vals <= 1))
    assert vals.max() == 1.0
    assert vals.min() == 0.0


# ---------------------------------------------------------------- preprocess


def test_preprocess_collinear_simplifies():
    out = preprocess(tset([(0, 0), (0.25, 0), (0.5, 0), (0.75, 0), (1, 0)], [(0, 1), (1, 1)]))
    assert len(out.by_id()["t0"].points) == 2


def test_preprocess_merges_duplicates():
    out = preprocess(tset([(0, 0), (0.5, 0.2), (1, 0)], [(0, 0), (0.5, 0.2), (1, 0)]))
    assert len(out) == 1 and out.trajectories[0].weight == 2


def test_spike_removed():
    pts = np.array([(0, 0), (0.1, 0), (0.1, 0.6), (0.2, 0), (0.3, 0)])
    cfg = PreprocessConfig()
    distances = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert distances[1] > cfg.max_step and distances[2] > cfg.max_step
    out = filter_spikes(pts, cfg.max_step)
    assert len(out) == 4 and not np.any(np.all(out == (0.1, 0.6), axis=1))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_preprocess_preserves_weight(n, seed):
    rng = np.random.default_rng(seed)
    trajs = []
    for i in range(n):
        pts = rng.random((rng.integers(2, 7), 2))
        if i and rng.random() < 0.4:
            pts = trajs[-1].points + 1e-5
        trajs.append(Trajectory(f"t{i}", pts, int(rng.integers(1, 4))))
    src = TrajectorySet(tuple(trajs), normalized=True)
    out = preprocess(src)
    assert out.total_weight() == src.total_weight()
    assert len(out) <= len(src)


# ---------------------------------------------------------------- JSON


def test_json_round_trip():
    src = tset([(0, 0), (0.5, 0.5)], [(1, 0), (0, 1)], normalized=True)
    back = trajectories_from_dict(json.loads(json.dumps(trajectories_to_dict(src))))
    assert back.ids == src.ids and back.normalized
    for a, b in zip(src, back):
        assert np.array_equal(a.points, b.points)


@pytest.mark.parametrize(
    "doc, where",
    [
        ({}, "trajectories"),
        ({"trajectories": [{"points": [[0, 0], [1, 1]]}]}, "trajectories[0].id"),
        ({"trajectories": [{"id": "a", "points": "x"}]}, "trajectories[0]"),
        ({"trajectories": [{"id": "a", "points": [[0, 0], [1, 1]], "weight": 0}]}, "trajectories[0]"),
    ],
)
def test_json_errors_name_field(doc, where):
    with pytest.raises(ParseError) as info:
        trajectories_from_dict(doc)
    assert info.value.field.startswith(where)
