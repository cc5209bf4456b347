import math

import numpy as np
import pytest

from pointdet.evaluation import (
    EvalConfig,
    MatchSet,
    average_precision,
    evaluate,
    map_score,
    match,
    nds,
    tp_metrics,
)
from pointdet.geometry import Box3D
from pointdet.synth import generate_frame, simulate_detections, DEFAULT_CLASS_MIX

from oracles import naive_score


def gt(cx=0.0, cy=0.0, label="car", frame="f", **kw):
    return Box3D(cx, cy, 0.0, 4.0, 2.0, 1.5, label=label, frame_id=frame, **kw)


def pred(cx=0.0, cy=0.0, score=0.5, label="car", frame="f", **kw):
    return Box3D(cx, cy, 0.0, 4.0, 2.0, 1.5, label=label, score=score, frame_id=frame, **kw)


def test_exact_match_at_every_distance():
    for d in (0.5, 1.0, 2.0, 3.0):
        assert match([pred()], [gt()], "car", d).tp.tolist() == [True]


def test_match_threshold_semantics():
    res = [match([pred(1.5)], [gt()], "car", d).tp[0] for d in (0.5, 1.0, 2.0, 3.0)]
    assert res == [False, False, True, True]


def test_higher_score_wins():
    ms = match([pred(0.1, score=0.4), pred(0.2, score=0.9)], [gt()], "car", 2.0)
    assert ms.pred_index.tolist() == [1, 0]
    assert ms.tp.tolist() == [True, False]


def test_match_respects_frames_and_classes():
    ms = match([pred(frame="a"), pred(label="truck")], [gt(frame="b")], "car", 2.0)
    assert ms.tp.tolist() == [False]


def test_greedy_equals_exhaustive_on_tiny_single_gt_cases():
    # with one gt per frame the greedy rule gives the gt to the highest scorer within range
    rng = np.random.default_rng(0)
    for _ in range(50):
        ps = [pred(*rng.uniform(-2, 2, 2), score=float(rng.random())) for _ in range(3)]
        ms = match(ps, [gt()], "car", 2.0)
        in_range = [i for i, p in enumerate(ps) if math.hypot(p.cx, p.cy) < 2.0]
        best = max(in_range, key=lambda i: ps[i].score) if in_range else None
        assert ms.pairs() == ([(best, 0)] if best is not None else [])


def test_ap_perfect_and_empty():
    gts = [gt(0), gt(10)]
    assert average_precision(match([pred(0, score=0.9), pred(10, score=0.8)], gts, "car", 2.0)) == 1.0
    assert average_precision(match([], gts, "car", 2.0)) == 0.0
    assert average_precision(match([pred()], [], "car", 2.0)) == 0.0


def test_ap_hand_example():
    gts = [gt(0), gt(10)]
    preds = [pred(0, score=0.9), pred(50, score=0.8), pred(10, score=0.7)]
    # PR points: (0.5, 1), (0.5, 0.5), (1, 2/3). Envelope: 1 up to r=0.5, then 2/3.
    # Kept levels r = 0.10..1.00: 41 at precision 1, 50 at precision 2/3.
    hand = (41 * 0.9 + 50 * (2 / 3 - 0.1)) / 91 / 0.9
    assert average_precision(match(preds, gts, "car", 2.0)) == pytest.approx(hand, abs=1e-12)


def test_map_examples():
    cls, ds = ["car", "bus"], [0.5, 1.0, 2.0, 3.0]
    assert map_score({c: {d: 1.0 for d in ds} for c in cls}, cls, ds) == 1.0
    assert map_score({c: {d: 0.0 for d in ds} for c in cls}, cls, ds) == 0.0
    assert map_score({"car": {d: 1.0 for d in ds}, "bus": {d: 0.0 for d in ds}}, cls, ds) == 0.5
    with pytest.raises(KeyError, match="bus"):
        map_score({"car": {d: 1.0 for d in ds}}, cls, ds)


def test_tp_examples():
    g = gt(attribute="vehicle.parked", vx=1.0, vy=1.0)
    ms = match([g.with_(score=0.5)], [g], "car", 2.0)
    assert tp_metrics(ms, [g], [g]) == {k: 0.0 for k in
                                         ("trans_err", "scale_err", "orient_err", "vel_err", "attr_err")}
    p = g.with_(vx=4.0, vy=5.0)
    assert tp_metrics(match([p], [g], "car", 2.0), [p], [g])["vel_err"] == pytest.approx(5.0)
    big = Box3D(0, 0, 0, 2, 2, 2, frame_id="f")
    small = Box3D(0, 0, 0, 1, 1, 1, frame_id="f")
    assert tp_metrics(match([big], [small], "car", 2.0), [big], [small])["scale_err"] == pytest.approx(0.875)


def test_tp_no_match_defaults_and_nan_attr():
    ms = MatchSet("car", 2.0, np.zeros(0, int), np.zeros(0), np.zeros(0, int), 1)
    assert set(tp_metrics(ms, [], [gt()]).values()) == {1.0}
    cone = Box3D(0, 0, 0, 0.4, 0.4, 1, label="traffic_cone", frame_id="f")
    m = tp_metrics(match([cone], [cone], "traffic_cone", 2.0), [cone], [cone])
    assert math.isnan(m["attr_err"])


def test_nds_examples():
    assert nds(1.0, [0, 0, 0, 0, 0]) == 1.0
    assert nds(0.2067, [0.527, 0.286, 1.10, 2.23, 0.284]) == pytest.approx(0.29365, abs=1e-9)
    assert nds(0.0, [1.40, 1, 1, 1, 1]) == 0.0
    with pytest.raises(ValueError):
        nds(0.5, [0.1])


def test_nds_monotone():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m, t = rng.random(), rng.uniform(0, 2, 5)
        assert nds(min(1, m + 0.1), t) >= nds(m, t)
        t2 = t.copy()
        t2[rng.integers(5)] += 0.2
        assert nds(m, t2) <= nds(m, t)


def scenario(seed, n_frames):
    rng = np.random.default_rng(seed)
    gts, preds = [], []
    for i in range(n_frames):
        boxes, *_ = generate_frame(rng, f"{i:04d}", DEFAULT_CLASS_MIX, max_objects=12, clutter=0)
        gts += boxes
        preds += simulate_detections(rng, boxes, f"{i:04d}")
    return preds, gts


def test_ap_monotone_in_distance_and_low_fp():
    preds, gts = scenario(1, 20)
    for c in ("car", "pedestrian", "barrier"):
        aps = [average_precision(match(preds, gts, c, d)) for d in (0.5, 1.0, 2.0, 3.0)]
        assert aps == sorted(aps)
        extra = preds + [Box3D(500, 500, 0, 1, 1, 1, label=c, score=0.0, frame_id="0000")]
        for d in (0.5, 2.0):
            assert average_precision(match(extra, gts, c, d)) <= average_precision(match(preds, gts, c, d))


def test_evaluate_matches_naive_scorer():
    preds, gts = scenario(2, 25)
    rep = evaluate(preds, gts)
    ref = naive_score(preds, gts)
    assert rep.classes == list(ref["ap"])
    for c in rep.classes:
        for d in rep.dist_ths:
            assert rep.ap[c][d] == pytest.approx(ref["ap"][c][d], abs=1e-9)
        for k, v in rep.tp[c].items():
            assert (math.isnan(v) and math.isnan(ref["tp"][c][k])) or v == pytest.approx(ref["tp"][c][k], abs=1e-9)
    assert rep.nds == pytest.approx(ref["NDS"], abs=1e-9)


def test_evaluate_perfect_and_empty():
    _, gts = scenario(3, 10)
    perfect = evaluate([g.with_(score=1.0) for g in gts], gts)
    assert perfect.mean_ap == 1.0 and perfect.nds == 1.0
    assert set(perfect.mean_tp.values()) == {0.0}
    empty = evaluate([], gts)
    assert empty.mean_ap == 0.0 and empty.nds == 0.0
    assert set(empty.mean_tp.values()) == {1.0}


def test_classes_without_gt_excluded():
    rep = evaluate([pred(), pred(label="bus")], [gt()])
    assert rep.classes == ["car"]
    assert rep.mean_ap == 1.0


def test_report_serialization():
    preds, gts = scenario(4, 5)
    rep = evaluate(preds, gts)
    d = rep.to_dict(include_pr=True)
    assert d["NDS_x100"] == pytest.approx(100 * d["NDS"])
    assert set(d["ap"]["car"]) == {"0.5", "1.0", "2.0", "3.0"}
    assert len(d["pr"]["car"]["2.0"]["recall"]) == 101
    assert rep.pr_csv().splitlines()[0] == "class,dist,recall,precision"
    assert "NDS" in rep.summary()


def test_recall_averaged_mode_runs():
    preds, gts = scenario(5, 10)
    rep = evaluate(preds, gts, EvalConfig(tp_mode="recall_averaged"))
    assert 0 <= rep.nds <= 1
    with pytest.raises(ValueError):
        EvalConfig(tp_mode="bogus")
