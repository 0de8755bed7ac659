"""Depth-completion and segmentation evaluation metrics.

Depth metrics run in meters over masked pixels that have ground truth;
segmentation metrics count pixels at binary or per-class granularity.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .rasters import MM_PER_M, DepthMap, MaskImage


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class DepthEvalResult:
    rmse: float  # meters
    mae: float  # meters
    rel: float
    delta_105: float
    delta_110: float
    delta_125: float
    pixel_count: int

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "rel": self.rel,
            "delta_105": self.delta_105,
            "delta_110": self.delta_110,
            "delta_125": self.delta_125,
            "pixel_count": self.pixel_count,
        }


@dataclass(frozen=True)
class SegEvalResult:
    f1: float
    iou: float
    accuracy: float
    precision: float
    recall: float

    def to_dict(self) -> dict:
        return {
            "f1": self.f1,
            "iou": self.iou,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
        }


def _as_depth_values(d) -> np.ndarray:
    if isinstance(d, DepthMap):
        return d.values
    return np.asarray(d, dtype=np.float64)


def eval_depth(pred, gt, mask: Optional[MaskImage] = None) -> DepthEvalResult:
    """Depth error metrics over masked pixels with ground truth present.

    Relative error divides by ground truth; the delta metrics count pixels
    whose larger depth ratio stays under the threshold."""
    p = _as_depth_values(pred)
    g = _as_depth_values(gt)
    if p.shape != g.shape:
        raise MetricsError("pred and gt dimensions differ")
    sel = g > 0
    if mask is not None:
        if mask.values.shape != g.shape:
            raise MetricsError("mask dimensions differ")
        sel = sel & (mask.values > 0)
    if not sel.any():
        raise MetricsError("empty evaluation set (no masked pixel has ground truth)")
    pm = p[sel] / MM_PER_M
    gm = g[sel] / MM_PER_M
    err = pm - gm
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    rel = float(np.mean(np.abs(err) / gm))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(pm / gm, gm / pm)
    ratio = np.where(np.isnan(ratio), np.inf, ratio)
    return DepthEvalResult(
        rmse=rmse,
        mae=mae,
        rel=rel,
        delta_105=float(np.mean(ratio < 1.05)),
        delta_110=float(np.mean(ratio < 1.10)),
        delta_125=float(np.mean(ratio < 1.25)),
        pixel_count=int(sel.sum()),
    )


def _binary_counts(pred_pos: np.ndarray, gt_pos: np.ndarray) -> SegEvalResult:
    tp = float(np.sum(pred_pos & gt_pos))
    fp = float(np.sum(pred_pos & ~gt_pos))
    fn = float(np.sum(~pred_pos & gt_pos))
    tn = float(np.sum(~pred_pos & ~gt_pos))
    total = tp + fp + fn + tn
    if tp + fp + fn == 0:
        # both masks empty: perfect agreement by convention
        return SegEvalResult(f1=1.0, iou=1.0, accuracy=1.0, precision=1.0, recall=1.0)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    iou = tp / (tp + fp + fn)
    accuracy = (tp + tn) / total
    return SegEvalResult(f1=f1, iou=iou, accuracy=accuracy, precision=precision, recall=recall)


def _as_mask_values(m) -> np.ndarray:
    if isinstance(m, MaskImage):
        return m.values
    return np.asarray(m)


def eval_segmentation(pred, gt, granularity: str = "binary") -> SegEvalResult:
    """Pixelwise segmentation metrics over label rasters or plain arrays.

    binary: positives are nonzero pixels. category: each class id present in
    the ground truth is scored one-vs-rest, then metrics macro-average."""
    p = _as_mask_values(pred)
    g = _as_mask_values(gt)
    if p.shape != g.shape:
        raise MetricsError("pred and gt dimensions differ")
    if granularity == "binary":
        return _binary_counts(p > 0, g > 0)
    if granularity != "category":
        raise MetricsError("granularity must be 'binary' or 'category'")
    classes = sorted(int(c) for c in np.unique(g) if c != 0)
    if not classes:
        return _binary_counts(p > 0, g > 0)
    parts = [_binary_counts(p == c, g == c) for c in classes]
    n = float(len(parts))
    return SegEvalResult(
        f1=sum(p.f1 for p in parts) / n,
        iou=sum(p.iou for p in parts) / n,
        accuracy=sum(p.accuracy for p in parts) / n,
        precision=sum(p.precision for p in parts) / n,
        recall=sum(p.recall for p in parts) / n,
    )


DEPTH_REPORT_COLUMNS = ("RMSE", "MAE", "Rel", "1.05", "1.10", "1.25")


def depth_report_text(results: Dict[str, DepthEvalResult]) -> str:
    """Aligned text table, one row per labeled result."""
    rows = []
    for name, r in results.items():
        rows.append(
            (name, "%.4f" % r.rmse, "%.4f" % r.mae, "%.4f" % r.rel,
             "%.3f" % r.delta_105, "%.3f" % r.delta_110, "%.3f" % r.delta_125)
        )
    header = ("",) + DEPTH_REPORT_COLUMNS
    widths = [max(len(row[i]) for row in rows + [header]) for i in range(len(header))]
    lines = []
    for row in [header] + rows:
        cells = [row[0].ljust(widths[0])] + [
            cell.rjust(widths[i]) for i, cell in enumerate(row) if i > 0
        ]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


__all__ = [
    "MetricsError",
    "DepthEvalResult",
    "SegEvalResult",
    "eval_depth",
    "eval_segmentation",
    "depth_report_text",
    "DEPTH_REPORT_COLUMNS",
]
