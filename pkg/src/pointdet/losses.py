"""Point-level auxiliary targets and loss functions with analytic gradients.

Every loss returns ``(value, gradient)`` where the gradient has the shape of the
prediction argument. Inputs are numpy arrays; computation is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import Box3D, points_in_boxes

PROB_EPS = 1e-7


@dataclass
class AuxTargets:
    s: np.ndarray  # (N,) int8 foreground label
    dp: np.ndarray  # (N, 3) offset from point to owning box center
    owner: np.ndarray  # (N,) owning box index, -1 for background

    @property
    def num_pos(self) -> int:
        return int(self.s.sum())


@dataclass
class LossWeights:
    omega: float = 1.0  # box regression
    beta: float = 0.2  # orientation classification
    mu: float = 2.0  # foreground segmentation
    lam: float = 4.0  # center estimation
    alpha: float = 0.25
    gamma: float = 2.0
    delta: float = 1.0  # smooth-L1 breakpoint

    def __post_init__(self):
        for name, val in vars(self).items():
            if val < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {val}")


def make_aux_targets(points, boxes: Sequence[Box3D]) -> AuxTargets:
    """Foreground labels and center offsets; the first containing box owns a point."""
    xyz = getattr(points, "xyz", points)
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    s = np.zeros(n, dtype=np.int8)
    dp = np.zeros((n, 3))
    owner = np.full(n, -1, dtype=np.int64)
    if n and boxes:
        inside = points_in_boxes(xyz, boxes)
        fg = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        owner[fg] = first[fg]
        centers = np.array([[b.cx, b.cy, b.cz] for b in boxes])
        dp[fg] = centers[first[fg]] - xyz[fg]
        s[fg] = 1
    return AuxTargets(s, dp, owner)


def _focal_terms(p, t, alpha, gamma):
    """Per-entry focal loss and its derivative w.r.t. the raw probability ``p``."""
    clipped = (p < PROB_EPS) | (p > 1.0 - PROB_EPS)
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    p_hat = np.where(t == 1, p, 1.0 - p)
    one_minus = 1.0 - p_hat
    log_p = np.log(p_hat)
    loss = -alpha * one_minus**gamma * log_p
    if gamma == 0:
        d_phat = -alpha / p_hat
    else:
        d_phat = alpha * (gamma * one_minus ** (gamma - 1) * log_p - one_minus**gamma / p_hat)
    grad = np.where(t == 1, d_phat, -d_phat)
    grad[clipped] = 0.0
    return loss, grad


def seg_loss(s_tilde, s, alpha: float = 0.25, gamma: float = 2.0):
    """Focal foreground-segmentation loss normalized by the foreground count.

    The normalizer is clamped to at least one so frames without foreground
    still give a finite loss.
    """
    s_tilde = np.asarray(s_tilde, dtype=np.float64)
    s = np.asarray(s)
    if s_tilde.shape != s.shape:
        raise ValueError(f"prediction shape {s_tilde.shape} != label shape {s.shape}")
    norm = max(1, int(np.sum(s == 1)))
    loss, grad = _focal_terms(s_tilde, s, alpha, gamma)
    return float(loss.sum()) / norm, grad / norm


def smooth_l1(d, delta: float = 1.0):
    """Huber-style smooth L1: quadratic inside ``|d| < delta``, linear outside."""
    d = np.asarray(d, dtype=np.float64)
    if delta <= 0:
        return np.abs(d), np.sign(d)
    ad = np.abs(d)
    quad = ad < delta
    val = np.where(quad, 0.5 * d * d / delta, ad - 0.5 * delta)
    der = np.where(quad, d / delta, np.sign(d))
    if val.ndim == 0:
        return float(val), float(der)
    return val, der


def ctr_loss(dp_pred, targets: AuxTargets, delta: float = 1.0):
    """Smooth-L1 center-offset loss over foreground points only."""
    dp_pred = np.asarray(dp_pred, dtype=np.float64)
    if dp_pred.shape != targets.dp.shape:
        raise ValueError(f"prediction shape {dp_pred.shape} != target shape {targets.dp.shape}")
    fg = targets.s == 1
    n_pos = int(fg.sum())
    grad = np.zeros_like(dp_pred)
    if n_pos == 0:
        return 0.0, grad
    val, der = smooth_l1(dp_pred[fg] - targets.dp[fg], delta)
    grad[fg] = der / n_pos
    return float(val.sum()) / n_pos, grad


def cls_focal_loss(probs, labels, alpha: float = 0.25, gamma: float = 2.0,
                   class_weights: Optional[Sequence[float]] = None):
    """Per-class binary focal loss over anchors.

    ``probs`` is (N, C) per-class probabilities; ``labels`` is (N,) with the
    true class index for positive anchors and -1 for background. The sum is
    normalized by the positive-anchor count (at least one).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ValueError(f"probs {probs.shape} and labels {labels.shape} do not align")
    n, c = probs.shape
    if np.any(labels >= c) or np.any(labels < -1):
        raise ValueError("labels must be -1 or a valid class index")
    onehot = np.zeros((n, c), dtype=np.int8)
    pos = labels >= 0
    onehot[np.nonzero(pos)[0], labels[pos]] = 1
    w = np.ones(c) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (c,):
        raise ValueError(f"class_weights must have length {c}")
    norm = max(1, int(pos.sum()))
    loss, grad = _focal_terms(probs, onehot, alpha, gamma)
    return float((loss * w).sum()) / norm, grad * w / norm


def _positive_mask(n, mask):
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"mask must have shape ({n},)")
    return mask


def box_reg_loss(pred, target, delta: float = 1.0, mask=None,
                 code_weights: Optional[Sequence[float]] = None):
    """Smooth-L1 over (x, y, z, l, w, h, vx, vy), summed per box and averaged over positives."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != 8:
        raise ValueError(f"expected matching (N, 8) arrays, got {pred.shape} and {target.shape}")
    pos = _positive_mask(len(pred), mask)
    cw = np.ones(8) if code_weights is None else np.asarray(code_weights, dtype=np.float64)
    norm = max(1, int(pos.sum()))
    val, der = smooth_l1(pred - target, delta)
    val = val * cw * pos[:, None]
    grad = der * cw * pos[:, None] / norm
    return float(val.sum()) / norm, grad


def orient_ce_loss(logits, labels, mask=None):
    """Softmax cross-entropy over orientation bins, averaged over positives."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} do not align")
    n, k = logits.shape
    if np.any((labels < 0) | (labels >= k)):
        raise ValueError("orientation labels out of range")
    pos = _positive_mask(n, mask)
    norm = max(1, int(pos.sum()))
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_soft = shifted - log_z
    rows = np.arange(n)
    nll = -log_soft[rows, labels]
    grad = np.exp(log_soft)
    grad[rows, labels] -= 1.0
    grad *= pos[:, None] / norm
    return float(nll[pos].sum()) / norm, grad


def joint_loss(parts: Mapping[str, float], w: LossWeights) -> float:
    """Weighted sum of the five training losses.

    ``parts`` needs keys ``cls``, ``box``, ``orient``, ``seg`` and ``ctr``.
    """
    return (
        parts["cls"]
        + w.omega * parts["box"]
        + w.beta * parts["orient"]
        + w.mu * parts["seg"]
        + w.lam * parts["ctr"]
    )
