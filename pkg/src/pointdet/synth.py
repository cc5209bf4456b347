"""Deterministic synthetic LiDAR scenes with annotations and simulated detections.

Layout written by :func:`generate_dataset`::

    <root>/manifest.json
    <root>/points/<frame>.bin            keyframe cloud
    <root>/sweeps/<frame>_<k>.bin        earlier sweeps, in their own ego frame
    <root>/annotations/<frame>.json      ground-truth boxes of the frame
    <root>/gts.json                      all ground truth, with frame_id
    <root>/preds.json                    simulated detector output, with frame_id and score
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Mapping, Optional

import numpy as np

from .classes import CLASS_NAMES
from .geometry import Box3D, bev_iou
from .io import FrameRecord, Manifest, PathLike, SweepRecord, save_boxes, save_pointcloud
from .pointcloud import PointCloud

# Mean (l, w, h) per class in meters.
CLASS_SIZES = {
    "car": (4.6, 1.95, 1.73),
    "truck": (6.9, 2.5, 2.8),
    "construction_vehicle": (6.4, 2.8, 3.2),
    "bus": (11.0, 2.9, 3.5),
    "trailer": (12.3, 2.9, 3.9),
    "barrier": (0.5, 2.5, 1.0),
    "motorcycle": (2.1, 0.8, 1.5),
    "bicycle": (1.7, 0.6, 1.3),
    "pedestrian": (0.73, 0.67, 1.77),
    "traffic_cone": (0.41, 0.41, 1.07),
}

# Long-tailed default mix, roughly the instance shares of a real driving dataset.
DEFAULT_CLASS_MIX = {
    "car": 0.437,
    "truck": 0.08,
    "construction_vehicle": 0.013,
    "bus": 0.014,
    "trailer": 0.022,
    "barrier": 0.14,
    "motorcycle": 0.011,
    "bicycle": 0.01,
    "pedestrian": 0.19,
    "traffic_cone": 0.083,
}

CLASS_ATTRIBUTES = {
    "car": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "truck": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "construction_vehicle": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "bus": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "trailer": ("vehicle.moving", "vehicle.parked", "vehicle.stopped"),
    "motorcycle": ("cycle.with_rider", "cycle.without_rider"),
    "bicycle": ("cycle.with_rider", "cycle.without_rider"),
    "pedestrian": ("pedestrian.moving", "pedestrian.standing", "pedestrian.sitting_lying_down"),
    "barrier": (),
    "traffic_cone": (),
}

GROUND_Z = -1.8
SWEEP_INTERVAL = 0.05
FRAME_INTERVAL = 0.5
SCENE_HALF_EXTENT = 45.0


def _moving(attr: Optional[str]) -> bool:
    return attr in ("vehicle.moving", "cycle.with_rider", "pedestrian.moving")


def random_box(rng: np.random.Generator, label: str, frame_id: str = "") -> Box3D:
    l, w, h = (s * float(rng.uniform(0.9, 1.1)) for s in CLASS_SIZES[label])
    x, y = rng.uniform(-SCENE_HALF_EXTENT, SCENE_HALF_EXTENT, 2)
    yaw = float(rng.uniform(-math.pi, math.pi))
    attrs = CLASS_ATTRIBUTES[label]
    attr = attrs[int(rng.integers(len(attrs)))] if attrs else None
    speed = 0.0
    if _moving(attr):
        speed = float(rng.uniform(0.8, 1.6) if label == "pedestrian" else rng.uniform(2.0, 12.0))
    return Box3D(float(x), float(y), GROUND_Z + 0.5 * h, l, w, h, yaw,
                 speed * math.cos(yaw), speed * math.sin(yaw), label, 1.0, attr, frame_id)


def sample_in_box(rng: np.random.Generator, b: Box3D, n: int) -> np.ndarray:
    """Uniform points strictly inside ``b`` (2% margin so float32 storage stays inside)."""
    local = rng.uniform(-0.49, 0.49, (n, 3)) * np.array([b.l, b.w, b.h])
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    x = c * local[:, 0] - s * local[:, 1] + b.cx
    y = s * local[:, 0] + c * local[:, 1] + b.cy
    return np.stack([x, y, local[:, 2] + b.cz], axis=1)


def generate_frame(rng: np.random.Generator, frame_id: str, class_mix: Mapping[str, float],
                   max_objects: int = 24, clutter: int = 1500):
    """One keyframe: boxes, points (N, 3), intensity (N,) and owning box per point (-1 = clutter)."""
    labels = list(class_mix)
    probs = np.array([class_mix[c] for c in labels], dtype=np.float64)
    probs = probs / probs.sum()
    n_obj = int(rng.integers(3, max_objects + 1))
    boxes: List[Box3D] = []
    for _ in range(n_obj):
        label = labels[int(rng.choice(len(labels), p=probs))]
        for _attempt in range(10):
            b = random_box(rng, label, frame_id)
            if all(bev_iou(b, o) == 0.0 for o in boxes):
                boxes.append(b)
                break
    parts = [sample_in_box(rng, b, int(rng.integers(4, 60))) for b in boxes]
    owner = np.concatenate([np.full(len(p), k) for k, p in enumerate(parts)] + [np.full(clutter, -1)])
    ground = np.column_stack([
        rng.uniform(-50.0, 50.0, (clutter, 2)),
        GROUND_Z + rng.normal(0.0, 0.03, clutter),
    ])
    parts.append(ground)
    xyz = np.concatenate(parts, axis=0)
    intensity = rng.uniform(0.0, 1.0, len(xyz))
    return boxes, xyz, intensity, owner.astype(np.int64)


def simulate_detections(rng: np.random.Generator, gts: List[Box3D], frame_id: str,
                        n_false: float = 3.0) -> List[Box3D]:
    """Noisy detector output: jittered true positives, duplicates, confusions and clutter."""
    preds: List[Box3D] = []
    for g in gts:
        if rng.random() > (0.9 if g.label in ("car", "pedestrian") else 0.7):
            continue
        sigma = 0.15 + 0.02 * g.l
        for dup in range(1 + int(rng.random() < 0.3)):
            cx, cy = np.array([g.cx, g.cy]) + rng.normal(0.0, sigma * (1 + dup), 2)
            dims = np.array([g.l, g.w, g.h]) * np.exp(rng.normal(0.0, 0.08, 3))
            yaw = g.yaw + rng.normal(0.0, 0.15) + (math.pi if rng.random() < 0.05 else 0.0)
            vx, vy = np.array([g.vx, g.vy]) + rng.normal(0.0, 0.5, 2)
            attr = g.attribute
            opts = CLASS_ATTRIBUTES[g.label]
            if opts and rng.random() < 0.15:
                attr = opts[int(rng.integers(len(opts)))]
            score = float(np.clip(rng.beta(5.0, 2.0) * (0.7 if dup else 1.0), 0.01, 1.0))
            label = g.label
            if label in ("car", "truck") and rng.random() < 0.05:
                label = "truck" if label == "car" else "car"
                opts = CLASS_ATTRIBUTES[label]
            preds.append(Box3D(float(cx), float(cy), g.cz + float(rng.normal(0, 0.1)),
                               *(float(v) for v in dims), yaw, float(vx), float(vy),
                               label, score, attr if attr in opts else None, frame_id))
    for _ in range(int(rng.poisson(n_false))):
        label = CLASS_NAMES[int(rng.integers(len(CLASS_NAMES)))]
        b = random_box(rng, label, frame_id)
        preds.append(b.with_(score=float(np.clip(rng.beta(1.5, 5.0), 0.01, 1.0))))
    return preds


def generate_dataset(root: PathLike, n_frames: int, seed: int = 0, n_sweeps: int = 10,
                     class_mix: Optional[Mapping[str, float]] = None,
                     clutter: int = 1500) -> Manifest:
    """Write a complete synthetic dataset under ``root``; byte-identical for a fixed seed."""
    root = Path(root)
    mix = dict(DEFAULT_CLASS_MIX if class_mix is None else class_mix)
    unknown = sorted(set(mix) - set(CLASS_NAMES))
    if unknown:
        raise ValueError(f"class mix names unknown classes {unknown}")
    if not mix or sum(mix.values()) <= 0 or any(v < 0 for v in mix.values()):
        raise ValueError("class mix weights must be non-negative with a positive sum")
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")

    manifest = Manifest(root)
    all_gts: List[Box3D] = []
    all_preds: List[Box3D] = []
    seeds = np.random.SeedSequence(seed).spawn(n_frames) if n_frames else []
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        fid = f"{i:06d}"
        ts = 1000.0 + FRAME_INTERVAL * i
        boxes, xyz, intensity, owner = generate_frame(rng, fid, mix, clutter=clutter)
        key = PointCloud.from_columns(xyz[:, 0], xyz[:, 1], xyz[:, 2], intensity)
        pts_rel = f"points/{fid}.bin"
        save_pointcloud(key, root / pts_rel)
        ann_rel = f"annotations/{fid}.json"
        save_boxes(root / ann_rel, boxes, with_score=False)

        ego_speed = float(rng.uniform(0.0, 10.0))
        vel = np.array([[b.vx, b.vy, 0.0] for b in boxes]) if boxes else np.zeros((0, 3))
        sweeps = []
        for k in range(1, n_sweeps):
            dt = SWEEP_INTERVAL * k
            keep = rng.random(len(xyz)) < 0.3
            p = xyz[keep].copy()
            own = owner[keep]
            moving = own >= 0
            p[moving] -= vel[own[moving]] * dt
            shift = np.array([-ego_speed * dt, 0.0, 0.0])  # sweep frame -> keyframe frame
            p -= shift
            pose = np.eye(4)
            pose[:3, 3] = shift
            cloud = PointCloud.from_columns(p[:, 0], p[:, 1], p[:, 2], intensity[keep])
            rel = f"sweeps/{fid}_{k:02d}.bin"
            save_pointcloud(cloud, root / rel)
            sweeps.append(SweepRecord(rel, ts - dt, [float(v) for v in pose.ravel()]))
        manifest.frames.append(FrameRecord(fid, ts, pts_rel, ann_rel, sweeps))
        all_gts.extend(boxes)
        all_preds.extend(simulate_detections(rng, boxes, fid))

    save_boxes(root / "gts.json", all_gts, with_score=False, with_frame=True)
    save_boxes(root / "preds.json", all_preds, with_score=True, with_frame=True)
    manifest.save()
    return manifest
