import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedcell.geometry import (
    LayoutError, MobilityConfig, billiard_move, billiard_step, generate_trajectories, has_los, jitter,
    load_layout, segments_intersect, stack_trajectories,
)
from conftest import rect_layout


# -- layouts -----------------------------------------------------------------

@pytest.mark.parametrize("name", ["A", "B"])
def test_narrow_rooms_are_18_by_6(name):
    lay = load_layout(name)
    assert lay.bbox == (0.0, 0.0, 18.0, 6.0)
    assert len(lay.outline) == 4
    assert lay.n_cells == 2
    assert lay.height == 4.0


@pytest.mark.parametrize("name,n_vertices", [("C", 6), ("D", 8), ("E", 6)])
def test_shaped_rooms_are_18_by_12(name, n_vertices):
    lay = load_layout(name)
    x0, y0, x1, y1 = lay.bbox
    assert (x1 - x0, y1 - y0) == (18.0, 12.0)
    assert len(lay.outline) == n_vertices
    assert lay.n_cells == 2
    assert np.all(lay.cells[:, 2] == 3.0)


def test_room_d_is_t_shaped():
    lay = load_layout("D")
    # bar across the top, stem in the middle of the bottom
    assert lay.contains(np.array([[1, 11], [17, 11], [9, 1]])).all()
    assert not lay.contains(np.array([[1, 1], [17, 1]])).any()


def test_l_rooms_differ_in_direction():
    c, e = load_layout("C"), load_layout("E")
    assert c.contains(np.array([[1, 11]]))[0] and not c.contains(np.array([[17, 11]]))[0]
    assert e.contains(np.array([[17, 11]]))[0] and not e.contains(np.array([[1, 11]]))[0]


def test_cells_on_long_axis_quarters():
    lay = load_layout("A")
    np.testing.assert_array_equal(lay.cells, [[4.5, 3, 3], [13.5, 3, 3]])


def test_cell_outside_room_rejected():
    doc = json.loads(load_layout("A").to_dict().__repr__().replace("'", '"'))
    doc["cells"][0] = [100, 100, 3]
    with pytest.raises(LayoutError, match="outside"):
        load_layout(doc)


def test_cell_above_ceiling_rejected():
    with pytest.raises(LayoutError, match="height"):
        rect_layout(cells=((4, 3, 5),))


def test_self_intersecting_outline_rejected():
    doc = {"name": "bowtie", "height": 4, "outline": [[0, 0], [4, 4], [4, 0], [0, 4]], "cells": [[2, 1, 3]]}
    with pytest.raises(LayoutError, match="self-intersecting"):
        load_layout(doc)


def test_zero_length_panel_rejected():
    with pytest.raises(LayoutError, match="zero length"):
        rect_layout(panels=(((3, 3), (3, 3)),))


def test_panel_leaving_room_rejected():
    with pytest.raises(LayoutError, match="leaves"):
        rect_layout(panels=(((3, 3), (3, 9)),))


def test_malformed_documents(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x",\n "outline": [[0,0],[1,0]\n')
    with pytest.raises(LayoutError, match="line"):
        load_layout(bad)
    with pytest.raises(LayoutError, match="missing key 'cells'"):
        load_layout({"name": "x", "height": 4, "outline": [[0, 0], [1, 0], [1, 1]]})
    with pytest.raises(LayoutError, match="unknown room"):
        load_layout("Z")


# -- segment intersection against exact arithmetic ------------------------------

def _orient(a, b, c):
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return (v > 0) - (v < 0)


def _on_segment(a, b, p):
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def exact_intersect(p1, p2, q1, q2):
    p1, p2, q1, q2 = ([Fraction(int(v)) for v in pt] for pt in (p1, p2, q1, q2))
    o1, o2, o3, o4 = _orient(p1, p2, q1), _orient(p1, p2, q2), _orient(q1, q2, p1), _orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and _on_segment(p1, p2, q1)) or (o2 == 0 and _on_segment(p1, p2, q2))
        or (o3 == 0 and _on_segment(q1, q2, p1)) or (o4 == 0 and _on_segment(q1, q2, p2))
    )


def test_segment_intersection_matches_exact_oracle(rng):
    # small integer grid makes touching and collinear cases frequent
    pts = rng.integers(0, 5, size=(4000, 4, 2))
    got = segments_intersect(pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3])
    want = [exact_intersect(*map(tuple, p)) for p in pts]
    assert got.tolist() == want


# -- line of sight ----------------------------------------------------------------

def test_los_without_panels():
    lay = rect_layout()
    assert has_los((1, 1, 1), (17, 5, 3), lay)


def test_panel_between_blocks():
    lay = rect_layout(panels=(((9, 0), (9, 6)),))
    assert not has_los((4.5, 3, 3), (13, 3, 1), lay)
    assert has_los((4.5, 3, 3), (8, 1, 1), lay)


def test_touching_panel_endpoint_counts_as_blocked():
    lay = rect_layout(panels=(((9, 0), (9, 3)),))
    assert not has_los((6, 3, 3), (12, 3, 1), lay)
    assert has_los((6, 3.01, 3), (12, 3.01, 1), lay)


def test_outline_walls_do_not_block():
    lay = load_layout("C")
    # the L's inner corner sits between these points
    assert has_los((1, 11, 1), (17, 1, 3), lay)


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(0.1, 17.9)] * 4))
def test_los_is_symmetric(coords):
    lay = load_layout("B")
    a = (coords[0], coords[1] % 6, 1.0)
    b = (coords[2], coords[3] % 6, 3.0)
    assert has_los(a, b, lay) == has_los(b, a, lay)


# -- billiard ---------------------------------------------------------------------

def test_reflection_off_vertical_wall():
    lay = rect_layout()
    pos, vel = billiard_step((0.5, 3), (-1, 0.5), lay)
    np.testing.assert_allclose(vel, [1, 0.5])
    np.testing.assert_allclose(pos, [0.5, 3.5])
    assert lay.contains(pos[None])[0]


def test_free_flight():
    lay = rect_layout()
    pos, vel = billiard_step((9.0, 1.5), (0.1, 0), lay)
    np.testing.assert_allclose(pos, [9.1, 1.5])
    np.testing.assert_array_equal(vel, [0.1, 0])


def test_corner_hit_preserves_speed():
    lay = rect_layout()
    pos, vel = billiard_step((1, 1), (-2, -2), lay)
    assert abs(np.linalg.norm(vel) - np.linalg.norm([2, 2])) < 1e-9
    np.testing.assert_allclose(vel, [2, 2])
    assert lay.contains(pos[None])[0]


def test_panels_reflect():
    lay = rect_layout(panels=(((9, 0), (9, 4)),))
    pos, vel = billiard_step((8.8, 2), (0.4, 0), lay)
    np.testing.assert_allclose(vel, [-0.4, 0])
    np.testing.assert_allclose(pos, [8.8, 2])


@settings(max_examples=150, deadline=None)
@given(
    room=st.sampled_from(["A", "B", "C", "D", "E"]),
    angle=st.floats(0, 2 * np.pi),
    speed=st.floats(0.05, 7.0),
    seed=st.integers(0, 10_000),
)
def test_billiard_speed_and_containment(room, angle, speed, seed):
    lay = load_layout(room)
    from fedcell.geometry import sample_interior
    pos = sample_interior(lay, 1, np.random.default_rng(seed))
    vel = speed * np.array([[np.cos(angle), np.sin(angle)]])
    for _ in range(20):
        pos, vel = billiard_move(pos, vel, lay.walls)
        assert lay.contains(pos)[0]
        assert abs(np.linalg.norm(vel) - speed) <= 1e-9 * speed


# -- trajectories -----------------------------------------------------------------

def test_trajectories_deterministic():
    lay = load_layout("C")
    cfg = MobilityConfig(n_ues=5, offset_sigma=0.0, seed=7)
    a = stack_trajectories(generate_trajectories(lay, cfg, 50))
    b = stack_trajectories(generate_trajectories(lay, cfg, 50))
    np.testing.assert_array_equal(a, b)
    cfg2 = MobilityConfig(n_ues=5, offset_sigma=0.5, seed=7)
    np.testing.assert_array_equal(
        stack_trajectories(generate_trajectories(lay, cfg2, 50)),
        stack_trajectories(generate_trajectories(lay, cfg2, 50)),
    )


@pytest.mark.parametrize("room", ["A", "B", "C", "D", "E"])
def test_full_sized_trajectories_stay_inside(room):
    lay = load_layout(room)
    trajs = generate_trajectories(lay, MobilityConfig(n_ues=30, offset_sigma=0.5, seed=1), 100)
    assert len(trajs) == 30 and all(len(t) == 100 for t in trajs)
    pos = stack_trajectories(trajs)
    assert lay.contains(pos[..., :2].reshape(-1, 2)).all()
    assert np.all(pos[..., 2] == 1.0)


def test_jitter_offsets_have_requested_spread(rng):
    big = rect_layout(w=1000, h=1000, cells=((500, 500, 3),))
    base = np.full((10_000, 2), 500.0)
    off = jitter(base, big, 0.5, rng) - base
    assert abs(off.std() - 0.5) < 0.025
    assert abs(off.mean()) < 0.02


def test_jitter_clamps_into_room(rng):
    lay = rect_layout()
    base = np.array([[1e-3, 3.0]] * 2000)
    out = jitter(base, lay, 5.0, rng)
    assert lay.contains(out).all()


def test_bad_mobility_config():
    with pytest.raises(ValueError):
        MobilityConfig(speed=0)
    with pytest.raises(ValueError):
        MobilityConfig(offset_sigma=-1)
    with pytest.raises(ValueError):
        MobilityConfig(n_ues=0)
    with pytest.raises(ValueError):
        generate_trajectories(load_layout("A"), MobilityConfig(), 0)
