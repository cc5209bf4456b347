"""Sparse mean-point voxelization and voxel index/world conversions."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import FormatError
from .io import PathLike, atomic_write_bytes
from .pointcloud import PointCloud

# Quantized coordinates within this many cells of a lattice plane snap onto it,
# so e.g. x=0 with min=-50.4, size=0.1 lands in cell 504 rather than 503.
SNAP_TOL = 1e-9


@dataclass(frozen=True)
class VoxelConfig:
    range_min: Tuple[float, float, float] = (-50.4, -51.2, -5.0)
    range_max: Tuple[float, float, float] = (50.4, 51.2, 3.0)
    voxel_size: Tuple[float, float, float] = (0.1, 0.1, 0.2)

    def __post_init__(self):
        for name in ("range_min", "range_max", "voxel_size"):
            val = tuple(float(v) for v in getattr(self, name))
            if len(val) != 3:
                raise ValueError(f"{name} needs three values")
            object.__setattr__(self, name, val)
        if any(hi <= lo for lo, hi in zip(self.range_min, self.range_max)):
            raise ValueError("range_max must exceed range_min on every axis")
        if any(s <= 0 for s in self.voxel_size):
            raise ValueError("voxel sizes must be positive")
        if any(d <= 0 for d in self.grid_dims):
            raise ValueError("grid has an empty axis")

    @property
    def grid_dims(self) -> Tuple[int, int, int]:
        return tuple(
            int(round((hi - lo) / s))
            for lo, hi, s in zip(self.range_min, self.range_max, self.voxel_size)
        )

    def dims_at(self, stride: int) -> Tuple[int, int, int]:
        return tuple(-(-d // stride) for d in self.grid_dims)


def _quantize(xyz: np.ndarray, cfg: VoxelConfig, stride: int = 1) -> np.ndarray:
    size = np.asarray(cfg.voxel_size) * stride
    q = (np.asarray(xyz, dtype=np.float64) - np.asarray(cfg.range_min)) / size
    r = np.rint(q)
    q = np.where(np.abs(q - r) <= SNAP_TOL, r, q)
    return np.floor(q).astype(np.int64)


def world_to_voxel_index(p: Sequence[float], cfg: VoxelConfig, stride: int = 1) -> Tuple[int, int, int]:
    idx = _quantize(np.asarray(p, dtype=np.float64).reshape(1, 3), cfg, stride)[0]
    dims = cfg.dims_at(stride)
    if np.any(idx < 0) or np.any(idx >= dims):
        raise IndexError(f"point {tuple(p)} lies outside the voxel range")
    return tuple(int(i) for i in idx)


def voxel_index_to_world(idx: Sequence[int], cfg: VoxelConfig, stride: int = 1) -> np.ndarray:
    """World-space center of voxel ``idx`` at the given downsampling stride."""
    idx = np.asarray(idx)
    dims = np.asarray(cfg.dims_at(stride))
    if idx.shape[-1] != 3:
        raise ValueError("voxel indices need three components")
    if np.any(idx < 0) or np.any(idx >= dims):
        raise IndexError(f"voxel index out of bounds for grid {tuple(dims)}")
    size = np.asarray(cfg.voxel_size) * stride
    return np.asarray(cfg.range_min) + (idx + 0.5) * size


class VoxelGrid:
    """Occupied voxels with their mean point and point count.

    ``indices`` is (K, 3) int64 sorted in x-major order, ``means`` is (K, 5) and
    ``counts`` is (K,). ``stride`` is the cumulative downsampling factor.
    """

    def __init__(self, config: VoxelConfig, indices, means, counts, stride: int = 1):
        self.config = config
        self.indices = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        self.means = np.asarray(means, dtype=np.float64).reshape(-1, 5)
        self.counts = np.asarray(counts, dtype=np.int64).reshape(-1)
        self.stride = int(stride)
        for a in (self.indices, self.means, self.counts):
            a.flags.writeable = False

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.config.dims_at(self.stride)

    def centers(self) -> np.ndarray:
        """World coordinates of every occupied voxel center."""
        if len(self) == 0:
            return np.zeros((0, 3))
        return voxel_index_to_world(self.indices, self.config, self.stride)

    def as_dict(self) -> dict:
        return {
            tuple(int(v) for v in i): (m, int(c))
            for i, m, c in zip(self.indices, self.means, self.counts)
        }


def _flat_keys(idx: np.ndarray, dims) -> np.ndarray:
    dx, dy, dz = (int(d) for d in dims)
    return (idx[:, 0] * dy + idx[:, 1]) * dz + idx[:, 2]


def _reduce(idx: np.ndarray, feats: np.ndarray, weights: np.ndarray, dims):
    """Group rows by voxel index; return sorted unique indices, weighted means, total weights."""
    if len(idx) == 0:
        return np.zeros((0, 3), np.int64), np.zeros((0, 5)), np.zeros(0, np.int64)
    keys = _flat_keys(idx, dims)
    uniq, inverse = np.unique(keys, return_inverse=True)
    counts = np.bincount(inverse, weights=weights, minlength=len(uniq))
    means = np.empty((len(uniq), feats.shape[1]))
    for c in range(feats.shape[1]):
        means[:, c] = np.bincount(inverse, weights=feats[:, c] * weights, minlength=len(uniq)) / counts
    dz = dims[2]
    dy = dims[1]
    out_idx = np.stack([uniq // (dy * dz), (uniq // dz) % dy, uniq % dz], axis=1)
    return out_idx, means, np.rint(counts).astype(np.int64)


def in_range_mask(pc: PointCloud, cfg: VoxelConfig) -> np.ndarray:
    idx = _quantize(pc.xyz, cfg)
    return np.all((idx >= 0) & (idx < np.asarray(cfg.grid_dims)), axis=1)


def voxelize(pc: PointCloud, cfg: VoxelConfig) -> VoxelGrid:
    """Bin in-range points into voxels, each holding the mean of its points.

    Bins are half-open, so points exactly on ``range_max`` are dropped.
    Accumulation is float64 and keyed by voxel, so the result does not depend on
    point order beyond summation rounding.
    """
    idx = _quantize(pc.xyz, cfg)
    keep = np.all((idx >= 0) & (idx < np.asarray(cfg.grid_dims)), axis=1)
    idx = idx[keep]
    feats = pc.data[keep]
    out_idx, means, counts = _reduce(idx, feats, np.ones(len(idx)), cfg.grid_dims)
    return VoxelGrid(cfg, out_idx, means, counts, stride=1)


def downsample(grid: VoxelGrid, factor: int = 2) -> VoxelGrid:
    """Merge voxels into parents at ``index // factor`` with count-weighted means."""
    if factor < 2:
        raise ValueError("downsample factor must be >= 2")
    stride = grid.stride * factor
    parent = grid.indices // factor
    dims = grid.config.dims_at(stride)
    out_idx, means, counts = _reduce(parent, grid.means, grid.counts.astype(np.float64), dims)
    return VoxelGrid(grid.config, out_idx, means, counts, stride=stride)


VOXEL_MAGIC = b"PDETVOXG"
_VOXEL_RECORD = np.dtype([("index", "<i4", (3,)), ("mean", "<f4", (5,)), ("count", "<u4")])


def encode_voxel_grid(grid: VoxelGrid) -> bytes:
    """Header: magic, u32 JSON length, JSON (config, stride, count); then 36-byte records."""
    header = json.dumps({
        "range_min": list(grid.config.range_min),
        "range_max": list(grid.config.range_max),
        "voxel_size": list(grid.config.voxel_size),
        "stride": grid.stride,
        "count": len(grid),
        "grid_dims": list(grid.dims),
    }).encode()
    rec = np.zeros(len(grid), dtype=_VOXEL_RECORD)
    rec["index"] = grid.indices
    rec["mean"] = grid.means
    rec["count"] = grid.counts
    return VOXEL_MAGIC + struct.pack("<I", len(header)) + header + rec.tobytes()


def decode_voxel_grid(buf: bytes, source: str = "<bytes>") -> VoxelGrid:
    if len(buf) < 12 or buf[:8] != VOXEL_MAGIC:
        raise FormatError(f"{source}: not a voxel grid dump")
    (hlen,) = struct.unpack_from("<I", buf, 8)
    try:
        header = json.loads(buf[12:12 + hlen])
    except json.JSONDecodeError as e:
        raise FormatError(f"{source}: bad header ({e})") from None
    body = buf[12 + hlen:]
    if len(body) != header["count"] * _VOXEL_RECORD.itemsize:
        raise FormatError(f"{source}: record block does not match count {header['count']}")
    rec = np.frombuffer(body, dtype=_VOXEL_RECORD)
    cfg = VoxelConfig(header["range_min"], header["range_max"], header["voxel_size"])
    return VoxelGrid(cfg, rec["index"].astype(np.int64), rec["mean"].astype(np.float64),
                     rec["count"].astype(np.int64), header["stride"])


def save_voxel_grid(grid: VoxelGrid, path: PathLike) -> None:
    atomic_write_bytes(path, encode_voxel_grid(grid))


def load_voxel_grid(path: PathLike) -> VoxelGrid:
    with open(path, "rb") as f:
        return decode_voxel_grid(f.read(), str(path))


def grid_summary(grid: VoxelGrid) -> dict:
    return {
        "grid_dims": list(grid.dims),
        "stride": grid.stride,
        "occupied_voxels": len(grid),
        "points": int(grid.counts.sum()),
    }
