import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointdet.geometry import (
    Box3D,
    aligned_iou_3d,
    bev_iou,
    bev_iou_matrix,
    box_corners_bev,
    center_distance_2d,
    normalize_yaw,
    point_in_box,
    points_in_box,
    polygon_area,
    yaw_diff,
)

from oracles import monte_carlo_bev_iou


def box(cx=0.0, cy=0.0, cz=0.0, l=4.0, w=2.0, h=2.0, yaw=0.0, **kw):
    return Box3D(cx, cy, cz, l, w, h, yaw, **kw)


finite = st.floats(-50, 50, allow_nan=False)
dims = st.floats(0.2, 8.0)
yaws = st.floats(-math.pi, math.pi)
boxes = st.builds(box, finite, finite, st.floats(-2, 2), dims, dims, dims, yaws)


def test_point_in_box_examples():
    b = box()
    assert point_in_box((0, 0, 0), b)
    assert not point_in_box((2.01, 0, 0), b)
    assert point_in_box((0, 1.9, 0), box(yaw=math.pi / 2))
    assert not point_in_box((1.9, 0, 0), box(yaw=math.pi / 2))


def test_points_in_box_boundary_is_inclusive():
    b = box()
    pts = np.array([[2.0, 1.0, 1.0], [-2.0, -1.0, -1.0], [2.0 + 1e-6, 0, 0]])
    assert points_in_box(pts, b).tolist() == [True, True, False]
    assert points_in_box(pts, b, tol=1e-5).tolist() == [True, True, True]


def test_bev_iou_examples():
    a = box()
    assert bev_iou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert bev_iou(a, box(cx=100.0)) == 0.0
    assert bev_iou(a, box(yaw=math.pi / 2)) == pytest.approx(1 / 3, abs=1e-9)


def test_bev_iou_cross_case_monte_carlo():
    a, b = box(), box(yaw=math.pi / 2)
    assert abs(bev_iou(a, b) - monte_carlo_bev_iou(a, b, n=200_000, seed=1)) < 5e-3


def test_bev_iou_touching_edges_is_zero():
    assert bev_iou(box(), box(cx=4.0)) == 0.0


def test_bev_iou_ignores_z():
    assert bev_iou(box(), box(cz=50.0)) == pytest.approx(1.0)


def test_bev_iou_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    a = [box(*rng.uniform(-3, 3, 2), 0, *rng.uniform(1, 4, 3), rng.uniform(-3, 3)) for _ in range(5)]
    b = a[2:] + [box()]
    m = bev_iou_matrix(a, b)
    assert m.shape == (5, 4)
    for i in range(5):
        for j in range(4):
            assert m[i, j] == bev_iou(a[i], b[j])


@settings(max_examples=200, deadline=None)
@given(boxes, boxes)
def test_bev_iou_symmetric_and_bounded(a, b):
    v = bev_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(bev_iou(b, a), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(boxes, st.floats(-20, 20), st.floats(-20, 20), yaws)
def test_bev_iou_rigid_motion_invariant(a, dx, dy, theta):
    b = a.with_(cx=a.cx + 0.7, yaw=a.yaw + 0.3)
    c, s = math.cos(theta), math.sin(theta)

    def move(x):
        return x.with_(cx=c * x.cx - s * x.cy + dx, cy=s * x.cx + c * x.cy + dy, yaw=x.yaw + theta)

    assert bev_iou(move(a), move(b)) == pytest.approx(bev_iou(a, b), abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(boxes)
def test_corners_area_and_orientation(b):
    corners = box_corners_bev(b)
    assert polygon_area(corners) == pytest.approx(b.l * b.w, rel=1e-9)
    # corners 0 and 1 form the front edge
    front = corners[:2].mean(axis=0)
    assert np.allclose(front, [b.cx + b.l / 2 * math.cos(b.yaw), b.cy + b.l / 2 * math.sin(b.yaw)])


def test_aligned_iou_examples():
    assert aligned_iou_3d(box(), box(cx=5, yaw=1.0)) == 1.0
    assert aligned_iou_3d(box(l=2, w=2, h=2), box(l=1, w=1, h=1)) == pytest.approx(1 / 8)
    assert aligned_iou_3d(box(l=4, w=2, h=2), box(l=2, w=4, h=2)) == pytest.approx(1 / 3)


def test_center_distance_examples():
    assert center_distance_2d(box(), box(cz=7)) == 0.0
    assert center_distance_2d(box(), box(cx=3, cy=4)) == pytest.approx(5.0)
    assert center_distance_2d(box(cx=1, cy=1), box(cx=2, cy=2)) == pytest.approx(math.sqrt(2))


def test_yaw_diff_examples():
    assert yaw_diff(0.3, 0.3) == 0.0
    assert yaw_diff(-math.pi + 0.1, math.pi - 0.1) == pytest.approx(0.2)
    assert yaw_diff(0, 3 * math.pi / 4) == pytest.approx(3 * math.pi / 4)


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_yaw_diff_range_and_symmetry(a, b):
    d = yaw_diff(a, b)
    assert 0.0 <= d <= math.pi + 1e-12
    assert d == pytest.approx(yaw_diff(b, a), abs=1e-9)


@given(st.floats(-1e3, 1e3))
def test_normalize_yaw_range(y):
    n = normalize_yaw(y)
    assert -math.pi < n <= math.pi
    assert math.cos(n) == pytest.approx(math.cos(y), abs=1e-9)


def test_box_validation():
    with pytest.raises(ValueError):
        box(l=0)
    with pytest.raises(ValueError):
        box(w=-1)
    with pytest.raises(ValueError):
        box(cx=float("nan"))
    with pytest.raises(ValueError):
        box(label="spaceship")
    assert box(yaw=3 * math.pi).yaw == pytest.approx(math.pi)
