import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routeflow.bundling import BundleHierarchy, BundlingParams
from routeflow.core import ControlPolyline
from routeflow.hotspots import CONVERGENCE, DIVERGENCE, extract_hotspots, layout_order
from routeflow.layout import (
    DEFAULT_RADIUS,
    GroupLayout,
    ObjectDisc,
    Unit,
    build_layout_plan,
    exit_axis,
    exit_order_score,
    hex_formation,
    pack_group,
)

R = DEFAULT_RADIUS


def discs(n):
    return [Unit.disc(f"o{i:02d}") for i in range(n)]


def test_radius_matches_nine_pixels_of_1250():
    assert R == pytest.approx(0.0072)
    with pytest.raises(ValueError):
        ObjectDisc("a", 0.0)


def test_single_disc_at_origin():
    gl = pack_group(discs(1), (1, 0))
    assert np.array_equal(gl.offsets["o00"], [0.0, 0.0])


@pytest.mark.parametrize("direction", [(1, 0), (0, 1), (-0.6, 0.8)])
def test_two_discs_touch_along_exit(direction):
    d = np.array(direction, float) / np.linalg.norm(direction)
    gl = pack_group(discs(2), d, [1, 0])
    a, b = gl.offsets["o00"], gl.offsets["o01"]
    sep = b - a
    assert abs(np.linalg.norm(sep) - 2 * R) < 1e-9
    assert abs(sep[0] * d[1] - sep[1] * d[0]) < 1e-9 * R
    assert b @ d > a @ d  # rank 0 sits on the exit side


def test_seven_discs_near_hexagonal():
    gl = pack_group(discs(7), (1, 0))
    assert gl.min_distance() >= 2 * R - 1e-9
    assert gl.enclosing_radius(R) <= 3 * R * 1.05


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 14), st.floats(0, 2 * np.pi), st.integers(0, 1000))
def test_pack_properties(n, angle, seed):
    rng = np.random.default_rng(seed)
    d = np.array([np.cos(angle), np.sin(angle)])
    ranks = [int(r) for r in rng.integers(0, 3, n)]
    units = discs(n)
    gl = pack_group(units, d, ranks)
    assert gl.min_distance() >= 2 * R - 1e-9
    assert gl.enclosing_radius(R) <= 2 * R * np.sqrt(n)
    assert exit_order_score(gl, d, {frozenset(u.ids): r for u, r in zip(units, ranks)}) >= 0.0
    again = pack_group(units, d, ranks)
    assert all(np.array_equal(gl.offsets[o], again.offsets[o]) for o in gl.offsets)


def test_rigid_bodies_keep_shape():
    body = Unit(("a", "b", "c"), np.array([[0, 0], [2 * R, 0], [R, np.sqrt(3) * R]]))
    gl = pack_group([body, Unit.disc("d"), Unit.disc("e")], (0, 1), [0, 1, 1])
    got = gl.array(["a", "b", "c"])
    np.testing.assert_allclose(got - got[0], body.offsets - body.offsets[0], atol=1e-14)
    assert gl.min_distance() >= 2 * R - 1e-9


def test_exit_axis_ranks_follow_projection():
    axis, ranks = exit_axis(np.array([[0.0, 1.0], [0.0, -1.0]]))
    assert ranks == [0, 1] and axis @ [0, 1] > 0


def test_hex_formation_is_a_clear_lattice():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(19, 2)) * 10 * R
    form = hex_formation(pts, R)
    gl = GroupLayout("x", {str(i): p for i, p in enumerate(form)}, [])
    assert gl.min_distance() >= 2 * R - 1e-9
    assert gl.enclosing_radius(R) <= 2 * R * np.sqrt(19)
    np.testing.assert_allclose(form.mean(axis=0), pts.mean(axis=0), atol=1e-12)


# ---------------------------------------------------------------- plans


def hierarchy(paths):
    final = {k: ControlPolyline(k, v, v) for k, v in paths.items()}
    return BundleHierarchy([], final, {}, {k: 1 for k in paths}, BundlingParams())


def plan_for(paths):
    g = extract_hotspots(hierarchy(paths))
    return g, build_layout_plan(g, layout_order(g))


def test_no_hotspots_zero_offsets():
    x = np.linspace(0.1, 0.9, 8)
    g, plan = plan_for({"a": np.c_[x, np.full(8, 0.2)], "b": np.c_[x, np.full(8, 0.8)]})
    for eid, off in plan.edge_offsets.items():
        for oid, v in off.items():
            assert np.array_equal(v, [0, 0]) and np.array_equal(plan.head_offset(eid, oid), [0, 0])


def test_diamond_discs_face_their_exits():
    x = np.linspace(0.05, 0.95, 9)
    mid = (x > 0.3) & (x < 0.7)
    g, plan = plan_for({"a": np.c_[x, np.where(mid, 0.5, 0.3)], "b": np.c_[x, np.where(mid, 0.5, 0.7)]})
    conv = next(h for h, s in g.hotspots.items() if s.kind == CONVERGENCE)
    div = next(h for h, s in g.hotspots.items() if s.kind == DIVERGENCE)
    for nid in (conv, div):
        assert plan.layouts[nid].min_distance() >= 2 * R - 1e-9
    exits = {g.edges[e].members: g.edges[e].direction_at_tail() for e in g.out_edges[div]}
    a, b = plan.layouts[div].offsets["a"], plan.layouts[div].offsets["b"]
    assert a @ exits[frozenset({"a"})] > b @ exits[frozenset({"a"})]
    assert b @ exits[frozenset({"b"})] > a @ exits[frozenset({"b"})]


def test_group_travelling_together_reuses_packing():
    C = 10
    x = np.linspace(0.1, 0.9, C)
    paths = {}
    for i in range(10):
        y = np.full(C, 0.5)
        y[0] = 0.1 + 0.08 * i
        y[-1] = 0.9 - 0.08 * i
        paths[f"o{i}"] = np.c_[x, y]
    g, plan = plan_for(paths)
    assert len(g.hotspots) == 2
    conv, div = sorted(g.hotspots, key=lambda h: g.nodes[h].position[0])
    a, b = plan.layouts[conv], plan.layouts[div]
    ids = sorted(a.offsets)
    rel_a = a.array(ids) - a.array(ids)[0]
    rel_b = b.array(ids) - b.array(ids)[0]
    assert np.abs(rel_a - rel_b).max() < 1e-15
    shared = next(e for e in g.out_edges[conv] if g.edges[e].head == div)
    off = plan.edge_offsets[shared]
    base = off[ids[0]] - b.offsets[ids[0]]
    for o in ids:
        assert np.array_equal(off[o] - plan.edge_shift[shared], off[o] - plan.edge_shift[shared])
        assert np.abs(off[o] - b.offsets[o] - base).max() < 1e-15


def test_standard_layouts(standard_runs):
    for _, _, r in standard_runs:
        g = r.graph
        for nid, gl in r.plan.layouts.items():
            n = len(gl.offsets)
            assert gl.min_distance() >= 2 * R - 1e-9
            assert gl.enclosing_radius(R) <= 2 * R * np.sqrt(n) + 1e-12
            outs = g.out_edges[nid]
            if len(outs) > 1:
                axis, ranks = exit_axis(np.array([g.edges[e].direction_at_tail() for e in outs]))
                body = {g.edges[e].members: rk for e, rk in zip(outs, ranks)}
                assert exit_order_score(gl, axis, body) >= 0.0


def test_plan_deterministic(standard_runs):
    _, _, r = standard_runs[3]
    again = build_layout_plan(r.graph, layout_order(r.graph))
    assert again.to_dict() == r.plan.to_dict()
