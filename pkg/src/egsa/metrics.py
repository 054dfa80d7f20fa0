"""Depth-accuracy, error, and segmentation metrics with dataset pooling.

Dataset aggregation is pixel-pooled: one pool across all images rather
than a per-image average, which keeps small test sets less noisy. The
convention is recorded in the pretty report header. Transparent-restricted
delta variants pool only pixels under the transparency masks.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, MetricUndefinedError

CSV_HEADER = ("delta_105,delta_110,delta_125,rmse,mae,rel,"
              "map_50,miou,delta_105_T,delta_110_T,delta_125_T")

DELTA_TAUS = (1.05, 1.10, 1.25)

# 11-point interpolation grid; k/10 keeps grid values exactly comparable
# with recalls computed as tp/num_gt
_RECALL_GRID = np.arange(11) / 10.0


def _masked(pred: np.ndarray, gt: np.ndarray, mask) -> tuple:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.shape != gt.shape:
        raise DataError(f"prediction/ground-truth size mismatch: "
                        f"{pred.shape} vs {gt.shape}")
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).ravel()
        pred, gt = pred[keep], gt[keep]
    if pred.size == 0:
        raise MetricUndefinedError("no pixels selected")
    return pred, gt


def delta_accuracy(pred, gt, tau: float, mask=None) -> float:
    """Percentage of pixels with max(D/D*, D*/D) < tau."""
    if tau <= 1.0:
        raise ValueError(f"tau must exceed 1, got {tau}")
    p, g = _masked(pred, gt, mask)
    if (p <= 0).any() or (g <= 0).any():
        raise DataError("delta accuracy needs positive depths")
    ratio = np.maximum(p / g, g / p)
    return 100.0 * float((ratio < tau).mean())


def depth_errors(pred, gt, mask=None) -> tuple:
    """(rmse, mae, rel) over the masked pixels."""
    p, g = _masked(pred, gt, mask)
    if (g <= 0).any():
        raise DataError("relative error needs positive ground-truth depth")
    diff = p - g
    rmse = float(np.sqrt((diff ** 2).mean()))
    mae = float(np.abs(diff).mean())
    rel = float((np.abs(diff) / g).mean())
    return rmse, mae, rel


def miou(pred_classes, gt_classes, num_classes: int) -> float:
    """Mean IoU (percent) over classes present in prediction or ground truth."""
    p = np.asarray(pred_classes).ravel()
    g = np.asarray(gt_classes).ravel()
    if p.shape != g.shape:
        raise DataError("class map size mismatch")
    ious = []
    for c in range(num_classes):
        pc, gc = p == c, g == c
        union = int(np.logical_or(pc, gc).sum())
        if union == 0:
            continue
        inter = int(np.logical_and(pc, gc).sum())
        ious.append(inter / union)
    if not ious:
        raise MetricUndefinedError("no classes present")
    return 100.0 * float(np.mean(ious))


def average_precision(detections, num_gt: int) -> float:
    """11-point interpolated AP (percent) for one class.

    detections: (confidence, is_true_positive) pairs across the dataset;
    num_gt: number of ground-truth positives.
    """
    if num_gt == 0:
        raise MetricUndefinedError("no ground-truth positives")
    if not detections:
        return 0.0
    order = sorted(detections, key=lambda d: -d[0])
    tps = np.cumsum([1 if tp else 0 for _, tp in order])
    ranks = np.arange(1, len(order) + 1)
    precision = tps / ranks
    recall = tps / num_gt
    interp = [
        float(precision[recall >= r].max()) if (recall >= r).any() else 0.0
        for r in _RECALL_GRID
    ]
    return 100.0 * float(np.mean(interp))


def map_at_iou(seg_probs, gt_classes, num_classes: int,
               iou_threshold: float = 0.5) -> float:
    """Detection-style mAP (percent) from semantic predictions.

    Each image contributes at most one prediction per non-background
    class: the argmax mask for that class, scored by the mean class
    probability over its predicted pixels. The prediction is a true
    positive iff its IoU with the image's ground-truth class mask exceeds
    the threshold. Classes with no ground-truth positives anywhere are
    skipped.
    """
    per_class = {c: {"dets": [], "num_gt": 0} for c in range(1, num_classes)}
    for probs, gt in zip(seg_probs, gt_classes):
        probs = np.asarray(probs, dtype=np.float64)
        gt = np.asarray(gt)
        pred = probs.argmax(axis=0)
        for c in range(1, num_classes):
            gt_mask = gt == c
            pred_mask = pred == c
            if gt_mask.any():
                per_class[c]["num_gt"] += 1
            if pred_mask.any():
                conf = float(probs[c][pred_mask].mean())
                union = np.logical_or(pred_mask, gt_mask).sum()
                inter = np.logical_and(pred_mask, gt_mask).sum()
                is_tp = bool(union > 0 and inter / union > iou_threshold)
                per_class[c]["dets"].append((conf, is_tp))
    aps = [
        average_precision(rec["dets"], rec["num_gt"])
        for rec in per_class.values()
        if rec["num_gt"] > 0
    ]
    if not aps:
        raise MetricUndefinedError("no ground-truth objects in any image")
    return float(np.mean(aps))


@dataclass(frozen=True)
class MetricReport:
    """Pixel-pooled evaluation summary; percentages in [0, 100]."""

    delta_105: float
    delta_110: float
    delta_125: float
    rmse: float
    mae: float
    rel: float
    map_50: float
    miou: float
    delta_105_T: Optional[float]
    delta_110_T: Optional[float]
    delta_125_T: Optional[float]
    pixel_count: int
    transparent_pixel_count: int
    edge_source: Optional[str] = None

    def __post_init__(self):
        if not self.delta_105 <= self.delta_110 <= self.delta_125:
            raise ValueError("delta accuracies must be monotone in tau")
        transparent = (self.delta_105_T, self.delta_110_T, self.delta_125_T)
        if all(v is not None for v in transparent):
            if not transparent[0] <= transparent[1] <= transparent[2]:
                raise ValueError("transparent deltas must be monotone in tau")
        for v in (self.delta_105, self.delta_110, self.delta_125,
                  self.map_50, self.miou) + transparent:
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"percentage out of range: {v}")

    _CSV_FIELDS = ("delta_105", "delta_110", "delta_125", "rmse", "mae",
                   "rel", "map_50", "miou", "delta_105_T", "delta_110_T",
                   "delta_125_T")

    @staticmethod
    def _fmt(v) -> str:
        return "NA" if v is None else f"{v:.6f}"

    def to_csv(self) -> str:
        row = ",".join(self._fmt(getattr(self, f)) for f in self._CSV_FIELDS)
        return f"{CSV_HEADER}\n{row}\n"

    def pretty(self) -> str:
        lines = ["# aggregation: pixel-pooled "
                 f"({self.pixel_count} px, {self.transparent_pixel_count} transparent)"]
        if self.edge_source is not None:
            lines.append(f"# edge source: {self.edge_source}")
        names = self._CSV_FIELDS
        values = [self._fmt(getattr(self, f)) for f in names]
        width = [max(len(n), len(v)) for n, v in zip(names, values)]
        lines.append("  ".join(n.rjust(w) for n, w in zip(names, width)))
        lines.append("  ".join(v.rjust(w) for v, w in zip(values, width)))
        return "\n".join(lines) + "\n"


def evaluate_report(depth_preds, depth_gts, seg_probs, seg_gts,
                    transparent_masks=None, num_classes: int = 3,
                    strict_transparent: bool = True,
                    edge_source: Optional[str] = None) -> MetricReport:
    """Aggregate every metric over aligned sample lists, pixel-pooled.

    With strict_transparent=True an empty transparent pixel pool raises
    MetricUndefinedError; with False the _T fields are reported as None
    (serialized as NA).
    """
    dp = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in depth_preds])
    dg = np.concatenate([np.asarray(g, dtype=np.float64).ravel() for g in depth_gts])

    deltas = [delta_accuracy(dp, dg, tau) for tau in DELTA_TAUS]
    rmse, mae, rel = depth_errors(dp, dg)

    pred_classes = np.concatenate(
        [np.asarray(p).argmax(axis=0).ravel() for p in seg_probs])
    gt_classes = np.concatenate([np.asarray(g).ravel() for g in seg_gts])
    miou_val = miou(pred_classes, gt_classes, num_classes)
    map_val = map_at_iou(seg_probs, seg_gts, num_classes)

    if transparent_masks is None:
        tmask = np.zeros(dp.shape, dtype=bool)
    else:
        tmask = np.concatenate(
            [np.asarray(m, dtype=bool).ravel() for m in transparent_masks])
    t_count = int(tmask.sum())
    if t_count == 0:
        if strict_transparent:
            raise MetricUndefinedError("no transparent pixels in dataset")
        t_deltas = [None, None, None]
    else:
        t_deltas = [delta_accuracy(dp, dg, tau, mask=tmask) for tau in DELTA_TAUS]

    return MetricReport(
        delta_105=deltas[0], delta_110=deltas[1], delta_125=deltas[2],
        rmse=rmse, mae=mae, rel=rel, map_50=map_val, miou=miou_val,
        delta_105_T=t_deltas[0], delta_110_T=t_deltas[1],
        delta_125_T=t_deltas[2],
        pixel_count=int(dp.size), transparent_pixel_count=t_count,
        edge_source=edge_source)
