"""Independent reference implementations used to check the library.

None of these call into the code paths they check: rectangle membership,
neighbor search, suppression and scoring are all rewritten here in the most
direct form.
"""

import math

import numpy as np

from pointdet.classes import CLASS_NAMES


def _local_xy(px, py, box):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = px - box.cx, py - box.cy
    return c * dx + s * dy, -s * dx + c * dy


def _inside_rect(px, py, box):
    lx, ly = _local_xy(px, py, box)
    return (np.abs(lx) <= box.l / 2) & (np.abs(ly) <= box.w / 2)


def _sample_rect(rng, box, n):
    """Jittered-grid (stratified) uniform samples: one random point per grid cell."""
    k = int(math.isqrt(n))
    i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    u = ((i.ravel() + rng.random(k * k)) / k - 0.5) * box.l
    v = ((j.ravel() + rng.random(k * k)) / k - 0.5) * box.w
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return box.cx + c * u - s * v, box.cy + s * u + c * v


def monte_carlo_bev_iou(a, b, n=1_000_000, seed=0):
    """IoU from stratified uniform samples inside each rectangle (areas are known exactly).

    The overlap fraction is estimated from both sides and the two intersection
    estimates are averaged.
    """
    rng = np.random.default_rng(seed)
    area_a, area_b = a.l * a.w, b.l * b.w
    xa, ya = _sample_rect(rng, a, n)
    xb, yb = _sample_rect(rng, b, n)
    inter = 0.5 * (area_a * _inside_rect(xa, ya, b).mean() + area_b * _inside_rect(xb, yb, a).mean())
    return inter / (area_a + area_b - inter)


def brute_interpolate(queries, positions, features, radius, eps=1e-6):
    """Direct double loop over queries and feature points."""
    queries = np.asarray(queries, dtype=float)
    positions = np.asarray(positions, dtype=float)
    features = np.asarray(features, dtype=float).reshape(len(positions), -1)
    out = np.zeros((len(queries), features.shape[1]))
    covered = np.zeros(len(queries), dtype=bool)
    for i, q in enumerate(queries):
        num = np.zeros(features.shape[1])
        den = 0.0
        for j, p in enumerate(positions):
            d = math.sqrt(sum((q[k] - p[k]) ** 2 for k in range(3)))
            if d <= radius:
                w = 1.0 / max(d, eps)
                num += w * features[j]
                den += w
        if den > 0:
            out[i] = num / den
            covered[i] = True
    return out, covered


def reference_nms(boxes, iou_fn, iou_thresh, score_thresh=0.0, candidates=None):
    """Forward-suppression NMS over a full IoU matrix."""
    idx = list(range(len(boxes))) if candidates is None else list(candidates)
    idx = [i for i in idx if boxes[i].score >= score_thresh]
    idx.sort(key=lambda i: (-boxes[i].score, i))
    n = len(idx)
    iou = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            iou[a, b] = iou_fn(boxes[idx[a]], boxes[idx[b]])
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for a in range(n):
        if suppressed[a]:
            continue
        keep.append(idx[a])
        suppressed |= iou[a] >= iou_thresh
    return keep


def reference_multi_group_nms(boxes, iou_fn, groups, score_thresh, iou_in, iou_cross, top_k, cap):
    pool = []
    for g in groups:
        members = [i for i, b in enumerate(boxes) if b.label in g and b.score >= score_thresh]
        members.sort(key=lambda i: (-boxes[i].score, i))
        members = members[:top_k]
        pool += reference_nms(boxes, iou_fn, iou_in, candidates=members)[:cap]
    return reference_nms(boxes, iou_fn, iou_cross, candidates=pool)


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def naive_score(preds, gts, dist_ths=(0.5, 1.0, 2.0, 3.0), tp_dist=2.0,
                min_recall=0.1, min_precision=0.1):
    """Straight-line scorer: plain loops, explicit recall levels, dict output."""
    classes = [c for c in CLASS_NAMES if any(g.label == c for g in gts)]

    buckets = {}
    for j, g in enumerate(gts):
        buckets.setdefault((g.label, g.frame_id), []).append(j)

    def greedy(c, d):
        ps = [(i, p) for i, p in enumerate(preds) if p.label == c]
        ps.sort(key=lambda t: (-t[1].score, t[0]))
        used = set()
        flags, pairs = [], []
        for i, p in ps:
            best, best_d = None, None
            for j in buckets.get((c, p.frame_id), []):
                g = gts[j]
                if j in used:
                    continue
                dd = math.sqrt((p.cx - g.cx) ** 2 + (p.cy - g.cy) ** 2)
                if best is None or dd < best_d:
                    best, best_d = j, dd
            if best is not None and best_d < d:
                used.add(best)
                flags.append(True)
                pairs.append((i, best))
            else:
                flags.append(False)
        return flags, pairs

    def ap_of(flags, n_gt):
        curve = []
        tp = fp = 0
        for f in flags:
            tp += f
            fp += not f
            curve.append((tp / n_gt, tp / (tp + fp)))
        total = 0.0
        levels = [k / 100 for k in range(101)]
        used_levels = [r for k, r in enumerate(levels) if k >= round(min_recall * 100)]
        for r in used_levels:
            best = 0.0
            for rec, prec in curve:
                if rec >= r:
                    best = max(best, prec)
            total += max(0.0, best - min_precision)
        return total / len(used_levels) / (1 - min_precision)

    ap = {c: {d: ap_of(greedy(c, d)[0], sum(g.label == c for g in gts)) for d in dist_ths}
          for c in classes}
    tp = {}
    for c in classes:
        _, pairs = greedy(c, tp_dist)
        if not pairs:
            tp[c] = dict(trans_err=1.0, scale_err=1.0, orient_err=1.0, vel_err=1.0, attr_err=1.0)
            continue
        te, se, oe, ve, ae = [], [], [], [], []
        for i, j in pairs:
            p, g = preds[i], gts[j]
            te.append(math.sqrt((p.cx - g.cx) ** 2 + (p.cy - g.cy) ** 2))
            inter = min(p.l, g.l) * min(p.w, g.w) * min(p.h, g.h)
            se.append(1 - inter / (p.l * p.w * p.h + g.l * g.w * g.h - inter))
            diff = (p.yaw - g.yaw) % (2 * math.pi)
            oe.append(min(diff, 2 * math.pi - diff))
            ve.append(math.sqrt((p.vx - g.vx) ** 2 + (p.vy - g.vy) ** 2))
            if g.attribute is not None:
                ae.append(0.0 if p.attribute == g.attribute else 1.0)
        tp[c] = dict(
            trans_err=sum(te) / len(te), scale_err=sum(se) / len(se),
            orient_err=sum(oe) / len(oe), vel_err=sum(ve) / len(ve),
            attr_err=(sum(ae) / len(ae)) if ae else float("nan"),
        )
    m_ap = sum(ap[c][d] for c in classes for d in dist_ths) / (len(classes) * len(dist_ths)) if classes else 0.0
    mtp = {}
    for k in ("trans_err", "scale_err", "orient_err", "vel_err", "attr_err"):
        vals = [tp[c][k] for c in classes if not math.isnan(tp[c][k])]
        mtp[k] = sum(vals) / len(vals) if vals else 1.0
    score = (5 * m_ap + sum(1 - min(1, v) for v in mtp.values())) / 10
    return {"ap": ap, "tp": tp, "mAP": m_ap, "mTP": mtp, "NDS": score}
