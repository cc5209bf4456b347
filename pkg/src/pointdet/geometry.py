"""Oriented box geometry in the LiDAR frame.

Boxes are yaw-only: the center ``(cx, cy, cz)`` is the geometric center, ``l`` is
the extent along the heading (box-frame X), ``w`` the lateral extent and ``h``
the vertical extent. Yaw is measured counterclockwise from +X about +Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .classes import CLASS_INDEX

TWO_PI = 2.0 * math.pi

# Intersection areas below this are clipping noise.
AREA_EPS = 1e-12


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(yaw, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def normalize_yaw_array(yaw: np.ndarray) -> np.ndarray:
    r = np.remainder(np.asarray(yaw, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    return np.where(r <= -math.pi, r + TWO_PI, r)


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    label: str = "car"
    score: float = 1.0
    attribute: Optional[str] = None
    frame_id: str = ""

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got {(self.l, self.w, self.h)}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"box score must lie in [0, 1], got {self.score}")
        if self.label not in CLASS_INDEX:
            raise ValueError(f"unknown detection class {self.label!r}")
        vals = (self.cx, self.cy, self.cz, self.yaw, self.vx, self.vy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("box fields must be finite")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.l, self.w, self.h])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def with_(self, **changes) -> "Box3D":
        return replace(self, **changes)


def box_corners_bev(b: Box3D) -> np.ndarray:
    """Return the (4, 2) BEV corners of ``b`` in counterclockwise order."""
    hl, hw = 0.5 * b.l, 0.5 * b.w
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([b.cx, b.cy])


def boxes_to_array(boxes: Sequence[Box3D]) -> np.ndarray:
    """Stack boxes into an (N, 9) array of (cx, cy, cz, l, w, h, yaw, vx, vy)."""
    if len(boxes) == 0:
        return np.zeros((0, 9))
    return np.array([[b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, b.vx, b.vy] for b in boxes])


def to_box_frame(points: np.ndarray, b: Box3D) -> np.ndarray:
    """Express (N, 3) world points in the local frame of ``b``."""
    d = np.asarray(points, dtype=np.float64)[:, :3] - np.array([b.cx, b.cy, b.cz])
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    x = c * d[:, 0] + s * d[:, 1]
    y = -s * d[:, 0] + c * d[:, 1]
    return np.stack([x, y, d[:, 2]], axis=1)


def points_in_box(points: np.ndarray, b: Box3D, tol: float = 0.0) -> np.ndarray:
    """Boolean mask of which (N, 3) points lie inside ``b``; the boundary counts as inside."""
    local = to_box_frame(np.atleast_2d(points), b)
    half = np.array([0.5 * b.l, 0.5 * b.w, 0.5 * b.h]) + tol
    return np.all(np.abs(local) <= half, axis=1)


def point_in_box(p: Sequence[float], b: Box3D, tol: float = 0.0) -> bool:
    return bool(points_in_box(np.asarray(p, dtype=np.float64).reshape(1, 3), b, tol)[0])


def points_in_boxes(points: np.ndarray, boxes: Sequence[Box3D], tol: float = 0.0) -> np.ndarray:
    """(N, K) membership matrix of points against a list of boxes."""
    points = np.asarray(points, dtype=np.float64)
    out = np.zeros((len(points), len(boxes)), dtype=bool)
    for k, b in enumerate(boxes):
        out[:, k] = points_in_box(points, b, tol)
    return out


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counterclockwise vertex order."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: Iterable[Sequence[float]], clip: np.ndarray) -> list:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp = output
        output = []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    t = s_prev / (s_prev - s_cur)
                    output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                output.append(cur)
            elif s_prev >= 0:
                t = s_prev / (s_prev - s_cur)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, s_prev = cur, s_cur
    return output


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    # circumscribed-circle rejection keeps far pairs cheap
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb:
        return 0.0
    poly = clip_convex(box_corners_bev(a), box_corners_bev(b))
    if len(poly) < 3:
        return 0.0
    area = polygon_area(np.asarray(poly))
    return area if area > AREA_EPS else 0.0


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Rotated bird's-eye-view IoU of two boxes."""
    inter = bev_intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.l * a.w + b.l * b.w - inter
    return min(1.0, max(0.0, inter / union))


def bev_iou_matrix(a: Sequence[Box3D], b: Sequence[Box3D]) -> np.ndarray:
    out = np.zeros((len(a), len(b)))
    for i, bi in enumerate(a):
        for j, bj in enumerate(b):
            out[i, j] = bev_iou(bi, bj)
    return out


def aligned_iou_3d(a: Box3D, b: Box3D) -> float:
    """3D IoU after aligning centers and yaws, i.e. a pure size comparison."""
    inter = min(a.l, b.l) * min(a.w, b.w) * min(a.h, b.h)
    return inter / (a.volume + b.volume - inter)


def center_distance_2d(a: Box3D, b: Box3D) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def yaw_diff(a: float, b: float) -> float:
    """Smallest absolute angle between two headings, in [0, pi]."""
    return abs(math.remainder(a - b, TWO_PI))
