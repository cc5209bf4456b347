"""Greedy rotated-BEV NMS, within class groups and across them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

from .geometry import Box3D, bev_iou
from .sampling import DEFAULT_GROUP_MAP, GroupMap


@dataclass
class NmsConfig:
    score_thresh: float = 0.1
    iou_in_group: float = 0.2
    iou_cross_group: float = 0.3
    pre_nms_top_k: int = 1000
    max_per_group: int = 80

    def __post_init__(self):
        for name in ("score_thresh", "iou_in_group", "iou_cross_group"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.pre_nms_top_k < 1 or self.max_per_group < 1:
            raise ValueError("pre_nms_top_k and max_per_group must be positive")


def _score_order(boxes: Sequence[Box3D], indices: Sequence[int]) -> List[int]:
    return sorted(indices, key=lambda i: (-boxes[i].score, i))


def _greedy(boxes: Sequence[Box3D], order: Sequence[int], iou_thresh: float) -> List[int]:
    kept: List[int] = []
    for i in order:
        bi = boxes[i]
        if all(bev_iou(bi, boxes[k]) < iou_thresh for k in kept):
            kept.append(i)
    return kept


def nms(boxes: Sequence[Box3D], iou_thresh: float, score_thresh: float = 0.0) -> List[int]:
    """Indices of boxes kept by greedy suppression, in keep order.

    Boxes scoring below ``score_thresh`` are dropped first. Remaining boxes are
    visited by descending score (ties by index) and kept when their BEV IoU
    with every kept box is below ``iou_thresh``.
    """
    cand = [i for i, b in enumerate(boxes) if b.score >= score_thresh]
    return _greedy(boxes, _score_order(boxes, cand), iou_thresh)


def multi_group_nms_indices(
    dets: Sequence[Box3D], groups: Optional[GroupMap] = None, cfg: Optional[NmsConfig] = None
) -> List[int]:
    groups = groups or DEFAULT_GROUP_MAP
    cfg = cfg or NmsConfig()
    members: List[List[int]] = [[] for _ in range(len(groups))]
    for i, d in enumerate(dets):
        members[groups.group_of(d.label)].append(i)
    pool: List[int] = []
    for idx in members:
        cand = [i for i in idx if dets[i].score >= cfg.score_thresh]
        order = _score_order(dets, cand)[: cfg.pre_nms_top_k]
        pool.extend(_greedy(dets, order, cfg.iou_in_group)[: cfg.max_per_group])
    # class-agnostic pass over the merged survivors
    return _greedy(dets, _score_order(dets, pool), cfg.iou_cross_group)


def multi_group_nms(
    dets: Sequence[Box3D], groups: Optional[GroupMap] = None, cfg: Optional[NmsConfig] = None
) -> List[Box3D]:
    """Per-group filter/top-k/NMS/cap, then NMS across groups; output sorted by score."""
    return [dets[i] for i in multi_group_nms_indices(dets, groups, cfg)]
