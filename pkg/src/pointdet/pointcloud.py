"""Point clouds, multi-sweep aggregation and joint point/box augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Box3D

COLUMNS = ("x", "y", "z", "intensity", "dt")


class PointCloud:
    """Columnar LiDAR points ``(x, y, z, intensity, dt)`` plus frame metadata.

    The point array is stored as float64 and made read-only; ``dt`` is the
    non-negative lag in seconds of the source sweep behind the keyframe.
    """

    __slots__ = ("_data", "meta")

    def __init__(self, data: np.ndarray, meta: Optional[dict] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, 5)
        if arr.ndim != 2 or arr.shape[1] != 5:
            raise ValueError(f"point array must have shape (N, 5), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("point array contains non-finite values")
        if np.any(arr[:, 4] < 0):
            raise ValueError("time lag column must be non-negative")
        arr.flags.writeable = False
        self._data = arr
        self.meta = dict(meta or {})

    @classmethod
    def from_columns(cls, x, y, z, intensity=None, dt=None, meta=None) -> "PointCloud":
        x = np.asarray(x, dtype=np.float64)
        n = len(x)
        intensity = np.zeros(n) if intensity is None else intensity
        dt = np.zeros(n) if dt is None else dt
        return cls(np.column_stack([x, y, z, intensity, dt]).reshape(n, 5), meta)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 5)))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def count(self) -> int:
        return len(self._data)

    def __len__(self) -> int:
        return len(self._data)

    @property
    def xyz(self) -> np.ndarray:
        return self._data[:, :3]

    @property
    def x(self) -> np.ndarray:
        return self._data[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self._data[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self._data[:, 2]

    @property
    def intensity(self) -> np.ndarray:
        return self._data[:, 3]

    @property
    def dt(self) -> np.ndarray:
        return self._data[:, 4]

    def subset(self, mask) -> "PointCloud":
        return PointCloud(self._data[mask], self.meta)

    def __repr__(self) -> str:
        return f"PointCloud(count={self.count})"


def concat_clouds(clouds: Sequence[PointCloud], meta: Optional[dict] = None) -> PointCloud:
    if not clouds:
        return PointCloud(np.zeros((0, 5)), meta)
    return PointCloud(np.concatenate([c.data for c in clouds], axis=0), meta)


@dataclass
class Sweep:
    cloud: PointCloud
    pose: np.ndarray  # 4x4, sweep frame -> keyframe frame
    timestamp: float

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)


@dataclass
class SweepSet:
    keyframe: PointCloud
    timestamp: float
    sweeps: List[Sweep] = field(default_factory=list)

    def __post_init__(self):
        for s in self.sweeps:
            if s.timestamp > self.timestamp:
                raise ValueError(
                    f"sweep timestamp {s.timestamp} is later than keyframe {self.timestamp}"
                )


def transform_points(xyz: np.ndarray, pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    return xyz @ pose[:3, :3].T + pose[:3, 3]


def aggregate_sweeps(s: SweepSet, n_sweeps: int = 10) -> PointCloud:
    """Merge the keyframe and up to ``n_sweeps - 1`` earlier sweeps into the keyframe frame.

    Sweeps are taken in the order stored. Each sweep point gets ``dt`` equal to
    keyframe time minus sweep time. If fewer sweeps exist than requested the
    available ones are used; ``meta["n_sweeps"]`` records how many went in.
    """
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    parts = [s.keyframe.data]
    used = s.sweeps[: n_sweeps - 1]
    for sw in used:
        d = sw.cloud.data
        out = np.empty_like(d)
        out[:, :3] = transform_points(d[:, :3], sw.pose)
        out[:, 3] = d[:, 3]
        out[:, 4] = s.timestamp - sw.timestamp
        parts.append(out)
    meta = dict(s.keyframe.meta)
    meta["n_sweeps"] = 1 + len(used)
    return PointCloud(np.concatenate(parts, axis=0), meta)


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    scale_range: Tuple[float, float] = (0.95, 1.05)
    rot_range: Tuple[float, float] = (-0.3925, 0.3925)
    trans_sigma: Tuple[float, float, float] = (0.2, 0.2, 0.2)
    trans_mode: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        self.scale_range = tuple(float(v) for v in self.scale_range)
        self.rot_range = tuple(float(v) for v in self.rot_range)
        self.trans_sigma = tuple(float(v) for v in self.trans_sigma)
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ValueError("flip_prob must lie in [0, 1]")
        if not (0 < self.scale_range[0] <= self.scale_range[1]):
            raise ValueError("scale_range must be positive and ordered")
        if not math.isclose(self.rot_range[0], -self.rot_range[1]) or self.rot_range[1] < 0:
            raise ValueError("rot_range must be symmetric about zero")
        if len(self.trans_sigma) != 3 or min(self.trans_sigma) < 0:
            raise ValueError("trans_sigma must be three non-negative values")
        if self.trans_mode not in ("gaussian", "uniform"):
            raise ValueError(f"trans_mode must be 'gaussian' or 'uniform', got {self.trans_mode!r}")


@dataclass(frozen=True)
class AugmentDraw:
    """One concrete global transform: flip across XZ, rotate about Z, scale, then shift."""

    flip: bool = False
    theta: float = 0.0
    scale: float = 1.0
    shift: Tuple[float, float, float] = (0.0, 0.0, 0.0)


def draw_augmentation(cfg: AugmentConfig) -> AugmentDraw:
    rng = np.random.default_rng(cfg.seed)
    flip = bool(rng.random() < cfg.flip_prob)
    theta = float(rng.uniform(*cfg.rot_range))
    scale = float(rng.uniform(*cfg.scale_range))
    sigma = np.array(cfg.trans_sigma)
    if cfg.trans_mode == "gaussian":
        shift = rng.normal(0.0, 1.0, 3) * sigma
    else:
        shift = rng.uniform(-1.0, 1.0, 3) * sigma
    return AugmentDraw(flip, theta, scale, tuple(float(v) for v in shift))


def transform_xyz(xyz: np.ndarray, draw: AugmentDraw) -> np.ndarray:
    p = np.array(xyz, dtype=np.float64)
    if draw.flip:
        p[:, 1] = -p[:, 1]
    if draw.theta != 0.0:
        c, s = math.cos(draw.theta), math.sin(draw.theta)
        x = c * p[:, 0] - s * p[:, 1]
        y = s * p[:, 0] + c * p[:, 1]
        p[:, 0], p[:, 1] = x, y
    if draw.scale != 1.0:
        p *= draw.scale
    return p + np.asarray(draw.shift)


def transform_box(b: Box3D, draw: AugmentDraw) -> Box3D:
    center = transform_xyz(np.array([[b.cx, b.cy, b.cz]]), draw)[0]
    yaw, vx, vy = b.yaw, b.vx, b.vy
    if draw.flip:
        yaw, vy = -yaw, -vy
    if draw.theta != 0.0:
        c, s = math.cos(draw.theta), math.sin(draw.theta)
        vx, vy = c * vx - s * vy, s * vx + c * vy
        yaw = yaw + draw.theta
    k = draw.scale
    return b.with_(
        cx=float(center[0]), cy=float(center[1]), cz=float(center[2]),
        l=b.l * k, w=b.w * k, h=b.h * k,
        yaw=yaw, vx=vx * k, vy=vy * k,
    )


def apply_augmentation(
    pc: PointCloud, boxes: Sequence[Box3D], draw: AugmentDraw
) -> Tuple[PointCloud, List[Box3D]]:
    data = np.array(pc.data)
    data[:, :3] = transform_xyz(data[:, :3], draw)
    meta = dict(pc.meta)
    meta["augment"] = {
        "flip": draw.flip, "theta": draw.theta, "scale": draw.scale, "shift": list(draw.shift)
    }
    return PointCloud(data, meta), [transform_box(b, draw) for b in boxes]


def augment(
    pc: PointCloud, boxes: Sequence[Box3D], cfg: AugmentConfig
) -> Tuple[PointCloud, List[Box3D]]:
    """Apply one seeded random global transform jointly to points and boxes."""
    return apply_augmentation(pc, boxes, draw_augmentation(cfg))
