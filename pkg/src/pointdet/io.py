"""On-disk formats: point-cloud binaries, box JSON files and dataset manifests.

Point-cloud binary layout (little-endian)::

    bytes 0..7    magic  b"PDETPCLD"
    bytes 8..11   u32 format version (1)
    bytes 12..15  u32 reserved (0)
    bytes 16..23  u64 point count N
    then N records of 5 x f32: x, y, z, intensity, dt   (20 bytes each)

Box JSON files hold an array of objects with keys ``cx, cy, cz, l, w, h, yaw,
vx, vy, class, attribute`` and, for predictions, ``score``; multi-frame files
add ``frame_id``.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from .classes import CLASS_INDEX
from .errors import FormatError
from .geometry import Box3D
from .pointcloud import PointCloud, Sweep, SweepSet

PathLike = Union[str, os.PathLike]

PC_MAGIC = b"PDETPCLD"
PC_VERSION = 1
PC_HEADER = struct.Struct("<8sII")
PC_COUNT = struct.Struct("<Q")
RECORD_BYTES = 20
RECORD_DTYPE = np.dtype("<f4")

MANIFEST_FORMAT = "pointdet-dataset"


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(path: PathLike, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def encode_pointcloud(pc: PointCloud) -> bytes:
    header = PC_HEADER.pack(PC_MAGIC, PC_VERSION, 0) + PC_COUNT.pack(pc.count)
    return header + pc.data.astype(RECORD_DTYPE).tobytes()


def decode_pointcloud(buf: bytes, source: str = "<bytes>") -> PointCloud:
    head = PC_HEADER.size + PC_COUNT.size
    if len(buf) < head:
        raise FormatError(f"{source}: malformed header ({len(buf)} bytes, need {head})")
    magic, version, _ = PC_HEADER.unpack_from(buf, 0)
    if magic != PC_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != PC_VERSION:
        raise FormatError(f"{source}: unsupported format version {version}")
    (count,) = PC_COUNT.unpack_from(buf, PC_HEADER.size)
    payload = len(buf) - head
    if payload % RECORD_BYTES:
        raise FormatError(
            f"{source}: payload of {payload} bytes is not a whole number of {RECORD_BYTES}-byte records"
        )
    if payload != count * RECORD_BYTES:
        raise FormatError(
            f"{source}: truncated or oversized record block: header says {count} points, "
            f"found {payload // RECORD_BYTES}"
        )
    arr = np.frombuffer(buf, dtype=RECORD_DTYPE, offset=head, count=count * 5).reshape(count, 5)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argmax(~np.all(np.isfinite(arr), axis=1)))
        raise FormatError(f"{source}: record {bad} contains non-finite values")
    if np.any(arr[:, 4] < 0):
        bad = int(np.argmax(arr[:, 4] < 0))
        raise FormatError(f"{source}: record {bad} has negative time lag")
    return PointCloud(arr.astype(np.float64))


def save_pointcloud(pc: PointCloud, path: PathLike) -> None:
    """Write ``pc`` in the binary format; values are stored as float32."""
    atomic_write_bytes(path, encode_pointcloud(pc))


def load_pointcloud(path: PathLike) -> PointCloud:
    with open(path, "rb") as f:
        buf = f.read()
    pc = decode_pointcloud(buf, str(path))
    pc.meta["source"] = str(path)
    return pc


_BOX_KEYS = ("cx", "cy", "cz", "l", "w", "h", "yaw", "vx", "vy")


def box_to_record(b: Box3D, with_score: bool = True, with_frame: bool = False) -> dict:
    rec = {}
    if with_frame:
        rec["frame_id"] = b.frame_id
    for k in _BOX_KEYS:
        rec[k] = float(getattr(b, k))
    rec["class"] = b.label
    rec["attribute"] = b.attribute
    if with_score:
        rec["score"] = float(b.score)
    return rec


def box_from_record(rec, where: str = "record") -> Box3D:
    if not isinstance(rec, dict):
        raise FormatError(f"{where}: expected an object, got {type(rec).__name__}")
    missing = [k for k in _BOX_KEYS + ("class",) if k not in rec]
    if missing:
        raise FormatError(f"{where}: missing keys {missing}")
    label = rec["class"]
    if label not in CLASS_INDEX:
        raise FormatError(f"{where}: unknown class {label!r}")
    try:
        vals = {k: float(rec[k]) for k in _BOX_KEYS}
    except (TypeError, ValueError) as e:
        raise FormatError(f"{where}: non-numeric box field ({e})") from None
    if not all(math.isfinite(v) for v in vals.values()):
        raise FormatError(f"{where}: non-finite box field")
    attr = rec.get("attribute")
    if attr is not None and not isinstance(attr, str):
        raise FormatError(f"{where}: attribute must be a string or null")
    score = rec.get("score", 1.0)
    frame_id = rec.get("frame_id", "")
    try:
        return Box3D(**vals, label=label, score=float(score), attribute=attr, frame_id=str(frame_id))
    except ValueError as e:
        raise FormatError(f"{where}: {e}") from None


def boxes_to_json(boxes: Iterable[Box3D], with_score: bool = True, with_frame: bool = False) -> str:
    recs = [box_to_record(b, with_score, with_frame) for b in boxes]
    return json.dumps(recs, indent=1) + "\n"


def save_boxes(path: PathLike, boxes: Iterable[Box3D], with_score: bool = True,
               with_frame: bool = False) -> None:
    atomic_write_text(path, boxes_to_json(boxes, with_score, with_frame))


def load_boxes(path: PathLike, require_score: bool = False) -> List[Box3D]:
    try:
        with open(path) as f:
            recs = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(recs, list):
        raise FormatError(f"{path}: expected a JSON array of boxes")
    out = []
    for i, r in enumerate(recs):
        where = f"{path}: record {i}"
        if require_score and isinstance(r, dict) and "score" not in r:
            raise FormatError(f"{where}: prediction without a score")
        out.append(box_from_record(r, where))
    return out


@dataclass
class SweepRecord:
    points: str
    timestamp: float
    pose: List[float]


@dataclass
class FrameRecord:
    frame_id: str
    timestamp: float
    points: str
    annotations: str
    sweeps: List[SweepRecord] = field(default_factory=list)


@dataclass
class Manifest:
    """A dataset directory: ``manifest.json`` plus the files it references."""

    root: Path
    frames: List[FrameRecord] = field(default_factory=list)

    def frame(self, frame_id: str) -> FrameRecord:
        for fr in self.frames:
            if fr.frame_id == frame_id:
                return fr
        raise KeyError(f"no frame {frame_id!r} in manifest")

    def path(self, rel: str) -> Path:
        return self.root / rel

    def load_points(self, fr: FrameRecord) -> PointCloud:
        pc = load_pointcloud(self.path(fr.points))
        pc.meta["frame_id"] = fr.frame_id
        return pc

    def load_boxes(self, fr: FrameRecord) -> List[Box3D]:
        boxes = load_boxes(self.path(fr.annotations))
        return [b.with_(frame_id=fr.frame_id) for b in boxes]

    def load_sweepset(self, fr: FrameRecord) -> SweepSet:
        key = self.load_points(fr)
        sweeps = [
            Sweep(load_pointcloud(self.path(s.points)), np.array(s.pose).reshape(4, 4), s.timestamp)
            for s in fr.sweeps
        ]
        return SweepSet(key, fr.timestamp, sweeps)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "frames": [
                {
                    "frame_id": fr.frame_id,
                    "timestamp": fr.timestamp,
                    "points": fr.points,
                    "annotations": fr.annotations,
                    "sweeps": [
                        {"points": s.points, "timestamp": s.timestamp, "pose": list(s.pose)}
                        for s in fr.sweeps
                    ],
                }
                for fr in self.frames
            ],
        }

    def save(self) -> None:
        dump_json(self.root / "manifest.json", self.to_dict())


def load_manifest(path: PathLike) -> Manifest:
    """Load a manifest from a dataset directory or a ``manifest.json`` path."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: not a {MANIFEST_FORMAT} manifest")
    frames = []
    for i, fr in enumerate(doc.get("frames", [])):
        try:
            sweeps = []
            for s in fr.get("sweeps", []):
                pose = [float(v) for v in s["pose"]]
                if len(pose) != 16:
                    raise FormatError(f"{path}: frame {i}: pose must have 16 entries")
                sweeps.append(SweepRecord(s["points"], float(s["timestamp"]), pose))
            frames.append(
                FrameRecord(str(fr["frame_id"]), float(fr["timestamp"]), fr["points"],
                            fr["annotations"], sweeps)
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"{path}: frame {i}: malformed entry ({e})") from None
    return Manifest(path.parent, frames)


def group_by_frame(boxes: Sequence[Box3D]) -> dict:
    out: dict = {}
    for b in boxes:
        out.setdefault(b.frame_id, []).append(b)
    return out
