"""Class-balanced frame duplication, ground-truth paste augmentation and class grouping."""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .classes import CLASS_NAMES, DEFAULT_GROUPS
from .errors import FormatError
from .geometry import Box3D, bev_iou, points_in_box
from .io import (
    Manifest,
    PathLike,
    box_from_record,
    box_to_record,
    dump_json,
    load_pointcloud,
    save_pointcloud,
)
from .pointcloud import PointCloud, concat_clouds

DEFAULT_CAP = 10
DEFAULT_RETRY_LIMIT = 20


class GroupMap:
    """Partition of the detection classes into head groups."""

    def __init__(self, groups: Sequence[Sequence[str]] = DEFAULT_GROUPS):
        self.groups = tuple(tuple(g) for g in groups)
        flat = [c for g in self.groups for c in g]
        unknown = sorted(set(flat) - set(CLASS_NAMES))
        if unknown:
            raise ValueError(f"unknown classes in group map: {unknown}")
        dupes = sorted(c for c, n in Counter(flat).items() if n > 1)
        if dupes:
            raise ValueError(f"classes assigned to more than one group: {dupes}")
        missing = sorted(set(CLASS_NAMES) - set(flat))
        if missing:
            raise ValueError(f"classes without a group: {missing}")
        if any(len(g) == 0 for g in self.groups):
            raise ValueError("empty group")
        self._index = {c: i for i, g in enumerate(self.groups) for c in g}

    def __len__(self) -> int:
        return len(self.groups)

    def group_of(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValueError(f"unknown detection class {label!r}") from None

    def split(self, dets: Iterable[Box3D]) -> List[List[Box3D]]:
        out: List[List[Box3D]] = [[] for _ in self.groups]
        for d in dets:
            out[self.group_of(d.label)].append(d)
        return out


DEFAULT_GROUP_MAP = GroupMap()


def group_of(label: str) -> int:
    return DEFAULT_GROUP_MAP.group_of(label)


def split_by_group(dets: Iterable[Box3D]) -> List[List[Box3D]]:
    return DEFAULT_GROUP_MAP.split(dets)


@dataclass
class ClassHistogram:
    counts: Dict[str, int] = field(default_factory=lambda: {c: 0 for c in CLASS_NAMES})

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def fractions(self) -> Dict[str, float]:
        t = self.total
        return {c: (n / t if t else 0.0) for c, n in self.counts.items()}

    def present(self) -> List[str]:
        return [c for c in CLASS_NAMES if self.counts.get(c, 0) > 0]


def _frame_labels(source) -> Dict[str, List[str]]:
    """Map frame id -> list of class labels, from a Manifest or a mapping of boxes/labels."""
    if isinstance(source, Manifest):
        return {fr.frame_id: [b.label for b in source.load_boxes(fr)] for fr in source.frames}
    out = {}
    for fid, items in source.items():
        labels = [it.label if isinstance(it, Box3D) else str(it) for it in items]
        for lab in labels:
            if lab not in CLASS_NAMES:
                raise FormatError(f"frame {fid}: unknown class label {lab!r}")
        out[str(fid)] = labels
    return out


def build_histogram(source) -> ClassHistogram:
    """Per-class instance counts over a dataset (Manifest or frame -> boxes mapping)."""
    counts = {c: 0 for c in CLASS_NAMES}
    for labels in _frame_labels(source).values():
        for lab in labels:
            counts[lab] += 1
    return ClassHistogram(counts)


@dataclass
class SamplePlan:
    copies: Dict[str, int]
    rng_seed: int = 0
    cap: int = DEFAULT_CAP

    @property
    def total(self) -> int:
        return sum(self.copies.values())

    def expand(self, seed: Optional[int] = None) -> List[str]:
        """The duplicated frame list in a seeded shuffled order."""
        ids = [fid for fid, n in self.copies.items() for _ in range(n)]
        rng = np.random.default_rng(self.rng_seed if seed is None else seed)
        return [ids[i] for i in rng.permutation(len(ids))]

    def to_dict(self) -> dict:
        return {"rng_seed": self.rng_seed, "cap": self.cap, "copies": dict(self.copies)}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplePlan":
        return cls({str(k): int(v) for k, v in d["copies"].items()}, int(d.get("rng_seed", 0)),
                   int(d.get("cap", DEFAULT_CAP)))


def class_ratios(hist: ClassHistogram, cap: float = DEFAULT_CAP) -> Dict[str, float]:
    """Capped ratio of the uniform share to each present class's empirical share.

    The uniform share is one over the number of classes that occur at all.
    """
    present = hist.present()
    if not present:
        return {}
    target = 1.0 / len(present)
    fr = hist.fractions()
    return {c: min(cap, target / fr[c]) for c in present}


def ds_sample_plan(hist: ClassHistogram, source, cap: int = DEFAULT_CAP, rng_seed: int = 0) -> SamplePlan:
    """Per-frame duplication counts that push the class distribution toward uniform.

    A frame is duplicated according to the rarest class it contains: copies are
    the rounded capped ratio of uniform share to empirical share, at least 1.
    Frames without annotations keep a single copy.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    labels = _frame_labels(source)
    ratios = class_ratios(hist, cap)
    copies = {}
    for fid, labs in labels.items():
        best = max((ratios.get(c, 1.0) for c in set(labs)), default=1.0)
        copies[fid] = max(1, int(math.floor(best + 0.5)))
    return SamplePlan(copies, rng_seed, cap)


def planned_histogram(plan: SamplePlan, source) -> ClassHistogram:
    counts = {c: 0 for c in CLASS_NAMES}
    for fid, labs in _frame_labels(source).items():
        k = plan.copies.get(fid, 0)
        for lab in labs:
            counts[lab] += k
    return ClassHistogram(counts)


def kl_to_uniform(hist: ClassHistogram, classes: Optional[Sequence[str]] = None) -> float:
    """KL divergence from the class distribution to uniform over ``classes``.

    ``classes`` defaults to the classes present in ``hist``.
    """
    classes = list(classes) if classes is not None else hist.present()
    total = sum(hist.counts.get(c, 0) for c in classes)
    if total == 0 or not classes:
        return 0.0
    k = len(classes)
    kl = 0.0
    for c in classes:
        p = hist.counts.get(c, 0) / total
        if p > 0:
            kl += p * math.log(p * k)
    return kl


@dataclass
class GtEntry:
    points: np.ndarray  # (n, 5)
    box: Box3D
    frame_id: str = ""


@dataclass
class GtDatabase:
    entries: Dict[str, List[GtEntry]] = field(default_factory=lambda: {c: [] for c in CLASS_NAMES})
    skipped: int = 0

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def counts(self) -> Dict[str, int]:
        return {c: len(v) for c, v in self.entries.items()}


def crop_objects(pc: PointCloud, boxes: Sequence[Box3D], frame_id: str = ""):
    """Database entries for each box with interior points, and the number skipped."""
    entries, skipped = [], 0
    for b in boxes:
        mask = points_in_box(pc.xyz, b)
        if not mask.any():
            skipped += 1
            continue
        entries.append(GtEntry(np.array(pc.data[mask]), b, frame_id))
    return entries, skipped


def build_gt_database(manifest: Manifest, threads: int = 1) -> GtDatabase:
    """Crop every annotated object out of its frame; boxes with no points are counted and skipped."""

    def work(fr):
        try:
            pc = manifest.load_points(fr)
            boxes = manifest.load_boxes(fr)
        except OSError as e:
            raise OSError(f"frame {fr.frame_id}: {e}") from e
        return crop_objects(pc, boxes, fr.frame_id)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, manifest.frames))
    else:
        results = [work(fr) for fr in manifest.frames]
    db = GtDatabase()
    for entries, skipped in results:
        db.skipped += skipped
        for e in entries:
            db.entries[e.box.label].append(e)
    return db


def save_gt_database(db: GtDatabase, root: PathLike) -> None:
    """Directory layout: ``<class>/index.json`` and ``<class>/<k>.bin`` per object."""
    root = Path(root)
    for cls in CLASS_NAMES:
        index = []
        for k, e in enumerate(db.entries.get(cls, [])):
            name = f"{k:06d}.bin"
            save_pointcloud(PointCloud(e.points), root / cls / name)
            index.append({"file": name, "frame_id": e.frame_id, "num_points": len(e.points),
                          "box": box_to_record(e.box, with_score=False)})
        dump_json(root / cls / "index.json", index)
    dump_json(root / "summary.json", {"skipped": db.skipped, "counts": db.counts()})


def load_gt_database(root: PathLike) -> GtDatabase:
    root = Path(root)
    db = GtDatabase()
    try:
        with open(root / "summary.json") as f:
            db.skipped = int(json.load(f)["skipped"])
    except FileNotFoundError:
        raise FormatError(f"{root}: missing summary.json, not a ground-truth database") from None
    for cls in CLASS_NAMES:
        idx_path = root / cls / "index.json"
        if not idx_path.exists():
            continue
        with open(idx_path) as f:
            index = json.load(f)
        for i, rec in enumerate(index):
            box = box_from_record(rec["box"], f"{idx_path}: record {i}")
            pts = load_pointcloud(root / cls / rec["file"]).data
            db.entries[cls].append(GtEntry(np.array(pts), box, rec.get("frame_id", "")))
    return db


def gt_aug(
    pc: PointCloud,
    boxes: Sequence[Box3D],
    db: GtDatabase,
    quota: Mapping[str, int],
    rng_seed: int = 0,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
) -> Tuple[PointCloud, List[Box3D]]:
    """Paste database objects into a frame until each class reaches its quota.

    Candidates must have zero BEV overlap with every box already in the scene
    (original or pasted); a collision draws another candidate, up to
    ``retry_limit`` draws per requested object. Objects keep their stored
    position. Unmet quota and rejections are reported in ``meta["gt_aug"]``.
    """
    rng = np.random.default_rng(rng_seed)
    frame_id = pc.meta.get("frame_id", boxes[0].frame_id if boxes else "")
    scene = list(boxes)
    present = Counter(b.label for b in boxes)
    pasted_pts = []
    pasted = Counter()
    unmet = Counter()
    rejected = 0
    for cls in CLASS_NAMES:
        need = int(quota.get(cls, 0)) - present[cls]
        pool = db.entries.get(cls, [])
        for _ in range(max(0, need)):
            placed = False
            for _attempt in range(retry_limit if pool else 0):
                cand = pool[int(rng.integers(len(pool)))]
                if all(bev_iou(cand.box, other) == 0.0 for other in scene):
                    scene.append(cand.box.with_(frame_id=frame_id))
                    pasted_pts.append(PointCloud(cand.points))
                    pasted[cls] += 1
                    placed = True
                    break
                rejected += 1
            if not placed:
                unmet[cls] += 1
    meta = dict(pc.meta)
    meta["gt_aug"] = {"pasted": dict(pasted), "unmet": dict(unmet), "rejected": rejected}
    return concat_clouds([pc, *pasted_pts], meta), scene
