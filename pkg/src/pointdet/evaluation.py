"""Center-distance detection scoring: per-class AP, true-positive errors and NDS."""

from __future__ import annotations

import io as _io
import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .classes import CLASS_NAMES
from .geometry import Box3D, aligned_iou_3d, center_distance_2d, yaw_diff

TP_METRICS = ("trans_err", "scale_err", "orient_err", "vel_err", "attr_err")
TP_SHORT = {
    "trans_err": "mATE",
    "scale_err": "mASE",
    "orient_err": "mAOE",
    "vel_err": "mAVE",
    "attr_err": "mAAE",
}


@dataclass
class EvalConfig:
    dist_ths: Tuple[float, ...] = (0.5, 1.0, 2.0, 3.0)
    tp_dist: float = 2.0
    min_recall: float = 0.1
    min_precision: float = 0.1
    n_recall: int = 101
    tp_mode: str = "per_match"
    classes: Tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        self.dist_ths = tuple(float(d) for d in self.dist_ths)
        self.classes = tuple(self.classes)
        if not self.dist_ths or any(d <= 0 for d in self.dist_ths):
            raise ValueError("distance thresholds must be positive")
        if self.tp_dist <= 0:
            raise ValueError("tp_dist must be positive")
        if not (0 <= self.min_recall < 1 and 0 <= self.min_precision < 1):
            raise ValueError("min_recall and min_precision must lie in [0, 1)")
        if self.n_recall < 2:
            raise ValueError("n_recall must be >= 2")
        if self.tp_mode not in ("per_match", "recall_averaged"):
            raise ValueError(f"tp_mode must be 'per_match' or 'recall_averaged', got {self.tp_mode!r}")
        unknown = set(self.classes) - set(CLASS_NAMES)
        if unknown:
            raise ValueError(f"unknown classes {sorted(unknown)}")


@dataclass
class MatchSet:
    """Score-ordered predictions of one class with their match status at one distance."""

    label: str
    dist: float
    pred_index: np.ndarray  # into the prediction list
    scores: np.ndarray
    gt_index: np.ndarray  # matched ground-truth index, -1 for false positives
    num_gt: int

    @property
    def tp(self) -> np.ndarray:
        return self.gt_index >= 0

    def pairs(self) -> List[Tuple[int, int]]:
        return [(int(p), int(g)) for p, g in zip(self.pred_index, self.gt_index) if g >= 0]


def match(preds: Sequence[Box3D], gts: Sequence[Box3D], label: str, dist: float) -> MatchSet:
    """Greedy center-distance matching of one class.

    Predictions are taken by descending score (ties by list index); each takes
    the nearest unmatched ground truth of its class in the same frame when that
    distance is below ``dist``. Distance ties go to the lower ground-truth index.
    """
    gt_by_frame: Dict[str, List[int]] = {}
    for j, g in enumerate(gts):
        if g.label == label:
            gt_by_frame.setdefault(g.frame_id, []).append(j)
    num_gt = sum(len(v) for v in gt_by_frame.values())
    centers = {
        fid: np.array([[gts[j].cx, gts[j].cy] for j in idx]) for fid, idx in gt_by_frame.items()
    }
    taken = {fid: np.zeros(len(idx), dtype=bool) for fid, idx in gt_by_frame.items()}

    order = sorted((i for i, p in enumerate(preds) if p.label == label),
                   key=lambda i: (-preds[i].score, i))
    matched = np.full(len(order), -1, dtype=np.int64)
    for k, i in enumerate(order):
        p = preds[i]
        idx = gt_by_frame.get(p.frame_id)
        if not idx:
            continue
        c = centers[p.frame_id]
        d = np.hypot(c[:, 0] - p.cx, c[:, 1] - p.cy)
        d[taken[p.frame_id]] = np.inf
        best = int(np.argmin(d))  # first minimum = lowest gt index
        if d[best] < dist:
            taken[p.frame_id][best] = True
            matched[k] = idx[best]
    order_arr = np.asarray(order, dtype=np.int64)
    scores = np.array([preds[i].score for i in order], dtype=np.float64)
    return MatchSet(label, float(dist), order_arr, scores, matched, num_gt)


def precision_recall(ms: MatchSet) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative (recall, precision) after each score-ordered prediction."""
    tp = np.cumsum(ms.tp)
    fp = np.cumsum(~ms.tp)
    if len(tp) == 0 or ms.num_gt == 0:
        return np.zeros(0), np.zeros(0)
    return tp / ms.num_gt, tp / (tp + fp)


def sampled_precision(ms: MatchSet, n_recall: int = 101) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolated precision at ``n_recall`` uniform recall levels in [0, 1].

    Precision at recall ``r`` is the best precision reached at any recall >= r,
    or 0 when the curve never reaches ``r``.
    """
    levels = np.arange(n_recall) / (n_recall - 1)
    rec, prec = precision_recall(ms)
    out = np.zeros(n_recall)
    if len(rec):
        envelope = np.maximum.accumulate(prec[::-1])[::-1]
        first = np.searchsorted(rec, levels, side="left")
        ok = first < len(rec)
        out[ok] = envelope[first[ok]]
    return levels, out


def average_precision(ms: MatchSet, min_recall: float = 0.1, min_precision: float = 0.1,
                      n_recall: int = 101) -> float:
    """Normalized area under the PR curve restricted to recall and precision above the floors."""
    if ms.num_gt == 0:
        return 0.0
    _, prec = sampled_precision(ms, n_recall)
    start = int(round(min_recall * (n_recall - 1)))
    # normalize per sample so a perfect curve averages to exactly 1
    adj = np.clip((prec[start:] - min_precision) / (1.0 - min_precision), 0.0, None)
    return float(np.mean(adj))


def map_score(ap: Mapping[str, Mapping[float, float]], classes: Sequence[str],
              thresholds: Sequence[float]) -> float:
    """Plain mean of AP over all (class, threshold) cells."""
    if not classes or not thresholds:
        return 0.0
    total = 0.0
    for c in classes:
        for d in thresholds:
            try:
                total += ap[c][d]
            except KeyError:
                raise KeyError(f"missing AP cell for class {c!r} at distance {d}") from None
    return total / (len(classes) * len(thresholds))


def _pair_errors(preds: Sequence[Box3D], gts: Sequence[Box3D], pairs) -> Dict[str, np.ndarray]:
    errs = {k: [] for k in TP_METRICS}
    for pi, gi in pairs:
        p, g = preds[pi], gts[gi]
        errs["trans_err"].append(center_distance_2d(p, g))
        errs["scale_err"].append(1.0 - aligned_iou_3d(p, g))
        errs["orient_err"].append(yaw_diff(p.yaw, g.yaw))
        errs["vel_err"].append(math.hypot(p.vx - g.vx, p.vy - g.vy))
        if g.attribute is None:
            errs["attr_err"].append(math.nan)
        else:
            errs["attr_err"].append(0.0 if p.attribute == g.attribute else 1.0)
    return {k: np.asarray(v, dtype=np.float64) for k, v in errs.items()}


def tp_metrics(ms: MatchSet, preds: Sequence[Box3D], gts: Sequence[Box3D],
               mode: str = "per_match", min_recall: float = 0.1,
               n_recall: int = 101) -> Dict[str, float]:
    """Translation, scale, orientation, velocity and attribute errors over matched pairs.

    With no matches every metric is 1. The attribute error only counts pairs
    whose ground truth carries an attribute; it is NaN when none does.
    ``mode="recall_averaged"`` instead averages the running mean error over
    recall levels from ``min_recall`` up to the achieved recall.
    """
    pairs = ms.pairs()
    if not pairs:
        return {k: 1.0 for k in TP_METRICS}
    errs = _pair_errors(preds, gts, pairs)
    if mode == "per_match":
        out = {}
        for k, v in errs.items():
            finite = v[~np.isnan(v)]
            out[k] = float(finite.mean()) if len(finite) else math.nan
        return out
    if mode != "recall_averaged":
        raise ValueError(f"unknown tp mode {mode!r}")
    recall_at_tp = np.arange(1, len(pairs) + 1) / ms.num_gt
    levels = np.arange(n_recall) / (n_recall - 1)
    start = int(round(min_recall * (n_recall - 1)))
    levels = levels[start:]
    levels = levels[levels <= recall_at_tp[-1]]
    if len(levels) == 0:
        return {k: 1.0 for k in TP_METRICS}
    first = np.searchsorted(recall_at_tp, levels, side="left")
    out = {}
    for k, v in errs.items():
        valid = ~np.isnan(v)
        if not valid.any():
            out[k] = math.nan
            continue
        csum = np.cumsum(np.where(valid, v, 0.0))
        cnt = np.cumsum(valid)
        run = np.divide(csum, cnt, out=np.full(len(v), np.nan), where=cnt > 0)
        sampled = run[first]
        sampled = sampled[~np.isnan(sampled)]
        out[k] = float(sampled.mean()) if len(sampled) else math.nan
    return out


def nds(m_ap: float, mtps: Sequence[float]) -> float:
    """Detection score: mAP weighted 5 against the five clamped TP errors."""
    mtps = list(mtps)
    if len(mtps) != 5:
        raise ValueError(f"expected 5 mean TP metrics, got {len(mtps)}")
    return (5.0 * m_ap + sum(1.0 - min(1.0, t) for t in mtps)) / 10.0


@dataclass
class EvalReport:
    classes: List[str]
    dist_ths: List[float]
    ap: Dict[str, Dict[float, float]]
    tp: Dict[str, Dict[str, float]]
    mean_ap: float
    mean_tp: Dict[str, float]
    nds: float
    num_gt: Dict[str, int] = field(default_factory=dict)
    num_pred: Dict[str, int] = field(default_factory=dict)
    pr: Dict[str, Dict[float, Tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)
    tp_mode: str = "per_match"

    def to_dict(self, include_pr: bool = False) -> dict:
        def num(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        out = {
            "classes_evaluated": list(self.classes),
            "excluded_classes_note": "classes without ground truth are left out of class means",
            "dist_ths": list(self.dist_ths),
            "tp_mode": self.tp_mode,
            "mAP": self.mean_ap,
            **{TP_SHORT[k]: self.mean_tp[k] for k in TP_METRICS},
            "NDS": self.nds,
            "NDS_x100": 100.0 * self.nds,
            "ap": {c: {str(d): v for d, v in row.items()} for c, row in self.ap.items()},
            "tp": {c: {k: num(v) for k, v in row.items()} for c, row in self.tp.items()},
            "num_gt": dict(self.num_gt),
            "num_pred": dict(self.num_pred),
        }
        if include_pr:
            out["pr"] = {
                c: {str(d): {"recall": r.tolist(), "precision": p.tolist()} for d, (r, p) in row.items()}
                for c, row in self.pr.items()
            }
        return out

    def pr_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "dist", "recall", "precision"])
        for c, row in self.pr.items():
            for d, (r, p) in row.items():
                for rv, pv in zip(r, p):
                    w.writerow([c, repr(float(d)), repr(float(rv)), repr(float(pv))])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"mAP: {self.mean_ap:.4f}"]
        for k in TP_METRICS:
            lines.append(f"{TP_SHORT[k]}: {self.mean_tp[k]:.4f}")
        lines.append(f"NDS: {self.nds:.4f} ({100 * self.nds:.2f})")
        return "\n".join(lines)


def evaluate(preds: Sequence[Box3D], gts: Sequence[Box3D],
             cfg: Optional[EvalConfig] = None) -> EvalReport:
    """Score predictions against ground truth over all classes and distance thresholds.

    Classes with no ground truth are excluded from the class means.
    """
    cfg = cfg or EvalConfig()
    num_gt = {c: 0 for c in cfg.classes}
    num_pred = {c: 0 for c in cfg.classes}
    for g in gts:
        if g.label in num_gt:
            num_gt[g.label] += 1
    for p in preds:
        if p.label in num_pred:
            num_pred[p.label] += 1
    classes = [c for c in cfg.classes if num_gt[c] > 0]

    ap: Dict[str, Dict[float, float]] = {}
    pr: Dict[str, Dict[float, Tuple[np.ndarray, np.ndarray]]] = {}
    tp: Dict[str, Dict[str, float]] = {}
    for c in classes:
        ap[c], pr[c] = {}, {}
        for d in cfg.dist_ths:
            ms = match(preds, gts, c, d)
            ap[c][d] = average_precision(ms, cfg.min_recall, cfg.min_precision, cfg.n_recall)
            pr[c][d] = sampled_precision(ms, cfg.n_recall)
        ms_tp = match(preds, gts, c, cfg.tp_dist)
        tp[c] = tp_metrics(ms_tp, preds, gts, cfg.tp_mode, cfg.min_recall, cfg.n_recall)

    m_ap = map_score(ap, classes, cfg.dist_ths)
    mean_tp = {}
    for k in TP_METRICS:
        vals = [tp[c][k] for c in classes if not math.isnan(tp[c][k])]
        mean_tp[k] = float(np.mean(vals)) if vals else 1.0
    score = nds(m_ap, [mean_tp[k] for k in TP_METRICS])
    return EvalReport(classes, list(cfg.dist_ths), ap, tp, m_ap, mean_tp, score,
                      num_gt, num_pred, pr, cfg.tp_mode)
