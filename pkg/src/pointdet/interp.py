"""Inverse-distance feature propagation from sparse feature points to query points.

Every feature point inside the ball of radius ``r`` around a query contributes
with weight ``1 / distance``; queries with no neighbor get a zero vector and
``covered = False``. Neighbor search uses a uniform hash grid with cell size ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

STAGE_RADII = (0.2, 0.4, 0.8)
STAGE_STRIDES = (1, 2, 4)

_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])
_QUERY_CHUNK = 1 << 15


@dataclass
class FeatureCloud:
    positions: np.ndarray  # (M, 3)
    features: np.ndarray  # (M, D)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        self.features = feats
        if len(self.positions) != len(self.features):
            raise ValueError(
                f"{len(self.positions)} positions but {len(self.features)} feature vectors"
            )
        if self.features.shape[1] < 1:
            raise ValueError("feature dimension must be >= 1")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.features))):
            raise ValueError("feature cloud contains non-finite values")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_voxel_grid(cls, grid) -> "FeatureCloud":
        """Voxel centers (at the grid's stride) carrying the voxel mean features."""
        return cls(grid.centers(), grid.means)


@dataclass
class InterpConfig:
    radius: float = STAGE_RADII[0]
    epsilon: float = 1e-6
    stage_radii: Tuple[float, ...] = field(default=STAGE_RADII)
    # downsampling stride of the voxel grid feeding each stage
    stage_strides: Tuple[int, ...] = field(default=STAGE_STRIDES)

    def __post_init__(self):
        self.stage_radii = tuple(float(r) for r in self.stage_radii)
        self.stage_strides = tuple(int(s) for s in self.stage_strides)
        if len(self.stage_strides) != len(self.stage_radii):
            raise ValueError("stage_strides and stage_radii must have the same length")
        if any(s < 1 for s in self.stage_strides):
            raise ValueError("stage strides must be >= 1")
        if self.radius <= 0 or any(r <= 0 for r in self.stage_radii):
            raise ValueError("interpolation radii must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def ball_pairs(queries: np.ndarray, positions: np.ndarray, radius: float):
    """All (query, point) index pairs with distance <= radius, plus those distances.

    Pairs come out grouped by query in ascending order.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
    if len(queries) == 0 or len(positions) == 0:
        return empty

    pcell = np.floor(positions / radius).astype(np.int64)
    lo = pcell.min(axis=0)
    hi = pcell.max(axis=0)
    span = hi - lo + 1
    if int(span[0]) * int(span[1]) * int(span[2]) >= 2**62:
        raise ValueError("feature points span too many hash cells for this radius")

    def key(c):
        c = c - lo
        return (c[:, 0] * span[1] + c[:, 1]) * span[2] + c[:, 2]

    pkey = key(pcell)
    order = np.argsort(pkey, kind="stable")
    sorted_keys = pkey[order]

    qi_all, j_all, d_all = [], [], []
    for q0 in range(0, len(queries), _QUERY_CHUNK):
        q = queries[q0:q0 + _QUERY_CHUNK]
        qcell = np.floor(q / radius).astype(np.int64)
        qi_parts, j_parts = [], []
        for off in _OFFSETS:
            nc = qcell + off
            valid = np.all((nc >= lo) & (nc <= hi), axis=1)
            if not np.any(valid):
                continue
            qv = np.nonzero(valid)[0]
            k = key(nc[qv])
            start = np.searchsorted(sorted_keys, k, side="left")
            stop = np.searchsorted(sorted_keys, k, side="right")
            n = stop - start
            total = int(n.sum())
            if total == 0:
                continue
            rep_q = np.repeat(qv, n)
            within = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
            qi_parts.append(rep_q)
            j_parts.append(order[np.repeat(start, n) + within])
        if not qi_parts:
            continue
        qi = np.concatenate(qi_parts)
        j = np.concatenate(j_parts)
        d = np.linalg.norm(q[qi] - positions[j], axis=1)
        inside = d <= radius
        qi, j, d = qi[inside], j[inside], d[inside]
        srt = np.lexsort((j, qi))
        qi_all.append(qi[srt] + q0)
        j_all.append(j[srt])
        d_all.append(d[srt])
    if not qi_all:
        return empty
    return np.concatenate(qi_all), np.concatenate(j_all), np.concatenate(d_all)


def interpolate(queries, fc: FeatureCloud, cfg: InterpConfig = None, radius: float = None):
    """Inverse-distance weighted features at each query point.

    Returns:
        features: (N, D) array, zero rows where uncovered.
        covered: (N,) bool, True when at least one feature point lies in the ball.
    """
    cfg = cfg or InterpConfig()
    r = cfg.radius if radius is None else float(radius)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    n, dim = len(queries), fc.dim
    qi, j, d = ball_pairs(queries, fc.positions, r)
    w = 1.0 / np.maximum(d, cfg.epsilon)
    den = np.bincount(qi, weights=w, minlength=n)
    covered = den > 0
    # normalize before summing so a lone neighbor contributes its feature exactly
    wn = w / den[qi]
    out = np.zeros((n, dim))
    for c in range(dim):
        out[:, c] = np.bincount(qi, weights=wn * fc.features[j, c], minlength=n)
    return out, covered


def multi_stage_interpolate(
    queries, stages: Sequence[Tuple[FeatureCloud, float]], epsilon: float = 1e-6
):
    """Interpolate each (feature cloud, radius) stage and concatenate per query.

    Returns the (N, sum of stage dims) features and an (N, n_stages) coverage mask.
    """
    if len(stages) == 0:
        raise ValueError("at least one stage is required")
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != 3:
        raise ValueError(f"queries must have shape (N, 3), got {queries.shape}")
    blocks: List[np.ndarray] = []
    flags: List[np.ndarray] = []
    for fc, radius in stages:
        if fc.features.ndim != 2:
            raise ValueError("stage features must be 2-D")
        f, cov = interpolate(queries, fc, InterpConfig(radius=radius, epsilon=epsilon))
        blocks.append(f)
        flags.append(cov)
    return np.concatenate(blocks, axis=1), np.stack(flags, axis=1)
