"""Metrics: per-pixel brute-force oracles, hand PR curves, pooling
equivalence, and the report schema."""

import numpy as np
import pytest

from egsa import metrics as M
from egsa.errors import DataError, MetricUndefinedError


# ----------------------------------------------------- brute-force oracles

def oracle_delta(pred, gt, tau, mask=None):
    hits = total = 0
    for p, g, keep in zip(pred.ravel(), gt.ravel(),
                          (mask.ravel() if mask is not None
                           else np.ones(pred.size, bool))):
        if not keep:
            continue
        total += 1
        if max(p / g, g / p) < tau:
            hits += 1
    return 100.0 * hits / total


def oracle_errors(pred, gt):
    diffs = [p - g for p, g in zip(pred.ravel(), gt.ravel())]
    n = len(diffs)
    rmse = (sum(d * d for d in diffs) / n) ** 0.5
    mae = sum(abs(d) for d in diffs) / n
    rel = sum(abs(d) / g for d, g in zip(diffs, gt.ravel())) / n
    return rmse, mae, rel


def oracle_miou(pred, gt, n_classes):
    ious = []
    for c in range(n_classes):
        inter = union = 0
        for p, g in zip(pred.ravel(), gt.ravel()):
            if p == c or g == c:
                union += 1
                if p == c and g == c:
                    inter += 1
        if union:
            ious.append(inter / union)
    return 100.0 * sum(ious) / len(ious)


def oracle_ap(detections, num_gt):
    order = sorted(detections, key=lambda d: -d[0])
    points = []
    tp = 0
    for i, (_, is_tp) in enumerate(order, start=1):
        tp += int(is_tp)
        points.append((tp / num_gt, tp / i))
    total = 0.0
    for r in [i / 10 for i in range(11)]:
        best = max((p for rec, p in points if rec >= r), default=0.0)
        total += best
    return 100.0 * total / 11


# ----------------------------------------------------- delta accuracy

def test_delta_perfect_and_uniform_ratio():
    gt = np.full((4, 4), 2.0)
    assert M.delta_accuracy(gt, gt, 1.05) == 100.0
    pred = 1.2 * gt
    assert M.delta_accuracy(pred, gt, 1.05) == 0.0
    assert M.delta_accuracy(pred, gt, 1.10) == 0.0
    assert M.delta_accuracy(pred, gt, 1.25) == 100.0


def test_delta_half_and_half():
    gt = np.ones(8)
    pred = np.ones(8)
    pred[4:] = 2.0
    for tau in M.DELTA_TAUS:
        assert M.delta_accuracy(pred, gt, tau) == 50.0


def test_delta_symmetry_and_monotonicity():
    rng = np.random.default_rng(70)
    gt = rng.uniform(0.5, 3.0, (8, 8))
    pred = gt * rng.uniform(0.8, 1.3, (8, 8))
    taus = (1.02, 1.05, 1.1, 1.25, 2.0)
    vals = [M.delta_accuracy(pred, gt, t) for t in taus]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    for t in taus:
        assert M.delta_accuracy(pred, gt, t) == M.delta_accuracy(gt, pred, t)


def test_delta_matches_oracle():
    rng = np.random.default_rng(71)
    gt = rng.uniform(0.5, 3.0, (8, 8))
    pred = gt * rng.uniform(0.7, 1.5, (8, 8))
    mask = rng.uniform(0, 1, (8, 8)) > 0.4
    for tau in M.DELTA_TAUS:
        assert M.delta_accuracy(pred, gt, tau) == pytest.approx(
            oracle_delta(pred, gt, tau), abs=1e-6)
        assert M.delta_accuracy(pred, gt, tau, mask) == pytest.approx(
            oracle_delta(pred, gt, tau, mask), abs=1e-6)


def test_delta_errors_and_edge_cases():
    gt = np.ones((2, 2))
    with pytest.raises(ValueError):
        M.delta_accuracy(gt, gt, 1.0)
    with pytest.raises(MetricUndefinedError):
        M.delta_accuracy(gt, gt, 1.1, mask=np.zeros((2, 2), bool))
    with pytest.raises(DataError):
        M.delta_accuracy(np.array([1.0, -1.0]), np.ones(2), 1.1)


# ----------------------------------------------------- depth errors

def test_depth_errors_hand_values():
    gt = np.full((3, 3), 2.0)
    pred = np.ones((3, 3))
    assert M.depth_errors(pred, gt) == pytest.approx((1.0, 1.0, 0.5))
    rmse, mae, rel = M.depth_errors(np.array([2.0, 3.0]), np.array([1.0, 3.0]))
    assert rmse == pytest.approx(1 / np.sqrt(2))
    assert mae == pytest.approx(0.5)
    assert rel == pytest.approx(0.5)


def test_depth_errors_match_oracle_and_inequality():
    rng = np.random.default_rng(72)
    gt = rng.uniform(0.5, 3.0, (8, 8))
    pred = gt + rng.normal(0, 0.4, (8, 8))
    got = M.depth_errors(pred, gt)
    assert got == pytest.approx(oracle_errors(pred, gt), abs=1e-9)
    assert got[0] >= got[1]


def test_depth_errors_permutation_invariant():
    rng = np.random.default_rng(73)
    gt = rng.uniform(0.5, 3.0, 64)
    pred = gt + rng.normal(0, 0.3, 64)
    perm = rng.permutation(64)
    assert M.depth_errors(pred, gt) == pytest.approx(
        M.depth_errors(pred[perm], gt[perm]), abs=1e-12)


# ----------------------------------------------------- miou

def test_miou_perfect_and_disjoint():
    gt = np.array([[0, 1], [2, 1]])
    assert M.miou(gt, gt, 3) == 100.0
    assert M.miou(np.full((2, 2), 1), np.full((2, 2), 2), 3) == 0.0


def test_miou_half_coverage():
    gt = np.array([1, 1, 1, 1])
    pred = np.array([1, 1, 0, 0])
    # class 1: IoU 1/2; class 0: present only in pred, IoU 0
    assert M.miou(pred, gt, 2) == pytest.approx(25.0)


def test_miou_matches_oracle():
    rng = np.random.default_rng(74)
    gt = rng.integers(0, 3, (8, 8))
    pred = rng.integers(0, 3, (8, 8))
    assert M.miou(pred, gt, 3) == pytest.approx(oracle_miou(pred, gt, 3), abs=1e-6)


# ----------------------------------------------------- average precision

def test_ap_hand_curve():
    # one TP at 0.9, one FP at 0.8, one gt never predicted
    dets = [(0.9, True), (0.8, False)]
    assert M.average_precision(dets, 2) == pytest.approx(100 * 6 / 11)
    assert M.average_precision(dets, 2) == pytest.approx(oracle_ap(dets, 2))


def test_ap_extremes():
    assert M.average_precision([(1.0, True)] * 4, 4) == pytest.approx(100.0)
    assert M.average_precision([(0.5, False)] * 3, 3) == 0.0
    assert M.average_precision([], 2) == 0.0
    with pytest.raises(MetricUndefinedError):
        M.average_precision([(0.9, True)], 0)


def test_ap_matches_oracle_random():
    rng = np.random.default_rng(75)
    for _ in range(5):
        n = int(rng.integers(1, 10))
        dets = [(float(rng.uniform()), bool(rng.integers(0, 2))) for _ in range(n)]
        num_gt = max(1, sum(tp for _, tp in dets) + int(rng.integers(0, 3)))
        assert M.average_precision(dets, num_gt) == pytest.approx(
            oracle_ap(dets, num_gt), abs=1e-9)


def one_hot_probs(classes, n_classes, confidence=1.0):
    h, w = classes.shape
    probs = np.full((n_classes, h, w), (1 - confidence) / (n_classes - 1))
    for c in range(n_classes):
        probs[c][classes == c] = confidence
    return probs


def test_map_perfect_predictions():
    rng = np.random.default_rng(76)
    gts = [rng.integers(0, 3, (8, 8)) for _ in range(3)]
    probs = [one_hot_probs(g, 3) for g in gts]
    assert M.map_at_iou(probs, gts, 3) == pytest.approx(100.0)


def test_map_hand_scenario():
    # image A: perfect class-1 block at confidence 0.9
    # image B: class-1 gt missed, disjoint prediction at confidence 0.8
    gt_a = np.zeros((4, 4), int)
    gt_a[:2, :2] = 1
    probs_a = one_hot_probs(gt_a, 2, confidence=0.9)
    gt_b = np.zeros((4, 4), int)
    gt_b[2:, 2:] = 1
    pred_b = np.zeros((4, 4), int)
    pred_b[:2, :2] = 1
    probs_b = one_hot_probs(pred_b, 2, confidence=0.8)
    val = M.map_at_iou([probs_a, probs_b], [gt_a, gt_b], 2)
    assert val == pytest.approx(100 * 6 / 11)


def test_map_all_low_iou_is_zero():
    gt = np.zeros((4, 4), int)
    gt[:2, :2] = 1
    pred = np.zeros((4, 4), int)
    pred[2:, 2:] = 1
    probs = one_hot_probs(pred, 2, confidence=0.9)
    assert M.map_at_iou([probs], [gt], 2) == 0.0


# ----------------------------------------------------- report

def make_dataset(seed, n=2, hw=8, n_classes=3):
    rng = np.random.default_rng(seed)
    gts = [rng.uniform(0.5, 2.0, (hw, hw)) for _ in range(n)]
    preds = [g * rng.uniform(0.85, 1.2, (hw, hw)) for g in gts]
    seg_gts = [rng.integers(0, n_classes, (hw, hw)) for _ in range(n)]
    seg_probs = [one_hot_probs(
        np.where(rng.uniform(0, 1, (hw, hw)) < 0.8, g, (g + 1) % n_classes), n_classes, 0.9)
        for g in seg_gts]
    masks = [rng.uniform(0, 1, (hw, hw)) > 0.6 for _ in range(n)]
    return preds, gts, seg_probs, seg_gts, masks


def test_report_perfect():
    rng = np.random.default_rng(77)
    gts = [rng.uniform(0.5, 2.0, (8, 8)) for _ in range(2)]
    seg_gts = [rng.integers(0, 3, (8, 8)) for _ in range(2)]
    probs = [one_hot_probs(g, 3) for g in seg_gts]
    masks = [np.ones((8, 8), bool)] * 2
    rep = M.evaluate_report(gts, gts, probs, seg_gts, masks)
    assert rep.delta_105 == rep.delta_125 == 100.0
    assert rep.rmse == rep.mae == rep.rel == 0.0
    assert rep.miou == 100.0 and rep.map_50 == pytest.approx(100.0)
    assert rep.delta_105_T == 100.0


def test_report_pooling_matches_concatenation():
    preds, gts, seg_probs, seg_gts, masks = make_dataset(78)
    rep = M.evaluate_report(preds, gts, seg_probs, seg_gts, masks)
    dp = np.concatenate([p.ravel() for p in preds])
    dg = np.concatenate([g.ravel() for g in gts])
    tm = np.concatenate([m.ravel() for m in masks])
    assert rep.delta_110 == pytest.approx(oracle_delta(dp, dg, 1.10), abs=1e-6)
    assert (rep.rmse, rep.mae, rep.rel) == pytest.approx(
        oracle_errors(dp, dg), abs=1e-9)
    pooled_pred = np.concatenate([p.argmax(axis=0).ravel() for p in seg_probs])
    pooled_gt = np.concatenate([g.ravel() for g in seg_gts])
    assert rep.miou == pytest.approx(oracle_miou(pooled_pred, pooled_gt, 3), abs=1e-6)
    assert rep.delta_105_T == pytest.approx(oracle_delta(dp, dg, 1.05, tm), abs=1e-6)
    assert rep.pixel_count == dp.size
    assert rep.transparent_pixel_count == tm.sum()


def test_report_empty_transparent_policy():
    preds, gts, seg_probs, seg_gts, _ = make_dataset(79)
    zeros = [np.zeros((8, 8), bool)] * len(preds)
    with pytest.raises(MetricUndefinedError):
        M.evaluate_report(preds, gts, seg_probs, seg_gts, zeros)
    rep = M.evaluate_report(preds, gts, seg_probs, seg_gts, zeros,
                            strict_transparent=False)
    assert rep.delta_105_T is None
    last = rep.to_csv().strip().splitlines()[1].split(",")
    assert last[-3:] == ["NA", "NA", "NA"]


def test_report_csv_schema():
    preds, gts, seg_probs, seg_gts, masks = make_dataset(80)
    rep = M.evaluate_report(preds, gts, seg_probs, seg_gts, masks,
                            edge_source="Depth")
    lines = rep.to_csv().strip().splitlines()
    assert lines[0] == ("delta_105,delta_110,delta_125,rmse,mae,rel,"
                        "map_50,miou,delta_105_T,delta_110_T,delta_125_T")
    assert len(lines) == 2 and len(lines[1].split(",")) == 11
    pretty = rep.pretty()
    assert "pixel-pooled" in pretty
    assert "edge source: Depth" in pretty


def test_report_validates_monotone_schema():
    kwargs = dict(rmse=0.5, mae=0.3, rel=0.1, map_50=50.0, miou=60.0,
                  delta_105_T=None, delta_110_T=None, delta_125_T=None,
                  pixel_count=10, transparent_pixel_count=0)
    rep = M.MetricReport(delta_105=65.28, delta_110=78.23, delta_125=93.05,
                         **kwargs)
    assert rep.delta_105 <= rep.delta_110 <= rep.delta_125
    with pytest.raises(ValueError):
        M.MetricReport(delta_105=80.0, delta_110=78.23, delta_125=93.05,
                       **kwargs)
    with pytest.raises(ValueError):
        M.MetricReport(delta_105=5.0, delta_110=50.0, delta_125=200.0,
                       **kwargs)
