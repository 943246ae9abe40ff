"""Confusion-matrix accumulation and per-class IoU / mIoU."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import DEFAULT_IGNORE_ID


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions. Ignore-labelled points are skipped."""

    counts: np.ndarray
    ignore_id: int = DEFAULT_IGNORE_ID

    @classmethod
    def zeros(cls, num_classes: int, ignore_id: int = DEFAULT_IGNORE_ID) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64), ignore_id)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.counts.shape != self.counts.shape:
            raise ValueError("cannot merge confusion matrices of different size")
        return ConfusionMatrix(self.counts + other.counts, self.ignore_id)


def accumulate(cm: ConfusionMatrix, pred, gt) -> ConfusionMatrix:
    pred = np.asarray(getattr(pred, "labels", pred), dtype=np.int64)
    gt = np.asarray(getattr(gt, "labels", gt), dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction length {pred.shape} != ground-truth length {gt.shape}")
    keep = gt != cm.ignore_id
    pred, gt = pred[keep], gt[keep]
    c = cm.num_classes
    if gt.size and (gt.max() >= c or pred.max() >= c or pred.min() < 0 or gt.min() < 0):
        raise ValueError(f"class id outside [0, {c})")
    counts = cm.counts + np.bincount(gt * c + pred, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(counts, cm.ignore_id)


def iou(cm: ConfusionMatrix, absent: str = "exclude") -> np.ndarray:
    """Per-class IoU. Classes with a zero denominator (and the ignore class) are NaN,
    or 0 with ``absent="zero"``."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    den = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, tp / np.where(den > 0, den, 1.0), np.nan)
    if 0 <= cm.ignore_id < cm.num_classes:
        out[cm.ignore_id] = np.nan
    if absent == "zero":
        out = np.where(np.isnan(out), 0.0, out)
        if 0 <= cm.ignore_id < cm.num_classes:
            out[cm.ignore_id] = np.nan
    return out


def miou(cm: ConfusionMatrix, absent: str = "exclude") -> Optional[float]:
    """Mean IoU over scored classes, or ``None`` when no class can be scored."""
    per_class = iou(cm, absent)
    scored = per_class[~np.isnan(per_class)]
    if scored.size == 0:
        return None
    return float(scored.mean())


def format_report(cm: ConfusionMatrix, names: Optional[dict] = None, absent: str = "exclude") -> str:
    """Per-class IoU table followed by the mIoU, in percent."""
    per_class = iou(cm, absent)
    names = names or {}
    rows = ["class                IoU"]
    for c, value in enumerate(per_class):
        if c == cm.ignore_id:
            continue
        label = names.get(c, str(c))
        shown = "   -" if np.isnan(value) else f"{100 * value:5.1f}"
        rows.append(f"{label:<18} {shown}")
    m = miou(cm, absent)
    rows.append(f"{'mIoU':<18} {'   -' if m is None else f'{100 * m:5.1f}'}")
    return "\n".join(rows) + "\n"
