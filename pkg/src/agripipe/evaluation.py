"""Confusion matrices and segmentation metrics (accuracy, F1, IOU, Dice)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyMatrix
from .raster import CLASS_NAMES

N_CLASSES = len(CLASS_NAMES)


def confusion(gt, pred, valid=None, n_classes: int = N_CLASSES) -> np.ndarray:
    """(n_classes, n_classes) int64 counts; rows are ground truth, columns predictions."""
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise DimensionMismatch(f"ground truth {gt.shape} vs prediction {pred.shape}")
    if valid is None:
        valid = np.ones(gt.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != gt.shape:
        raise DimensionMismatch(f"mask {valid.shape} vs labels {gt.shape}")
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    if g.size and (g.min() < 0 or g.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return np.bincount(g * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    iou: tuple[float, ...]
    dice: tuple[float, ...]
    present: tuple[bool, ...]
    mean_precision: float
    mean_f1: float
    miou: float
    mdc: float
    evaluated_pixels: int

    def record(self) -> str:
        """Single-line key=value form."""
        items = [
            ("accuracy", self.accuracy),
            ("mean_precision", self.mean_precision),
            ("mean_f1", self.mean_f1),
            ("miou", self.miou),
            ("mdc", self.mdc),
        ]
        for c, name in enumerate(CLASS_NAMES):
            items += [
                (f"{name}.precision", self.precision[c]),
                (f"{name}.recall", self.recall[c]),
                (f"{name}.f1", self.f1[c]),
                (f"{name}.iou", self.iou[c]),
                (f"{name}.dice", self.dice[c]),
            ]
        fields = [f"{k}={v:.6f}" for k, v in items]
        fields.append(f"evaluated_pixels={self.evaluated_pixels}")
        return " ".join(fields)

    def table(self) -> str:
        rows = [f"{'class':<12}{'precision':>10}{'recall':>10}{'F1':>10}{'IOU':>10}{'Dice':>10}"]
        for c, name in enumerate(CLASS_NAMES):
            mark = "" if self.present[c] else " (absent)"
            rows.append(
                f"{name:<12}{self.precision[c]:>10.4f}{self.recall[c]:>10.4f}"
                f"{self.f1[c]:>10.4f}{self.iou[c]:>10.4f}{self.dice[c]:>10.4f}{mark}"
            )
        rows.append("")
        rows.append(f"accuracy        {self.accuracy:.4f}")
        rows.append(f"mean precision  {self.mean_precision:.4f}")
        rows.append(f"mean F1         {self.mean_f1:.4f}")
        rows.append(f"mIOU            {self.miou:.4f}")
        rows.append(f"mDC             {self.mdc:.4f}")
        rows.append(f"pixels          {self.evaluated_pixels}")
        return "\n".join(rows) + "\n"


def compute_metrics(cm) -> MetricsReport:
    """Derive the report from a confusion matrix.

    Any 0/0 ratio is 0. Class means only include classes that occur in the
    ground truth or the prediction.
    """
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total <= 0:
        raise EmptyMatrix("confusion matrix has no counts")
    k = cm.shape[0]
    precision, recall, f1, iou, dice, present = [], [], [], [], [], []
    for c in range(k):
        tp = int(cm[c, c])
        fp = int(cm[:, c].sum()) - tp
        fn = int(cm[c, :].sum()) - tp
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        precision.append(p)
        recall.append(r)
        f1.append(_ratio(2 * p * r, p + r))
        iou.append(_ratio(tp, tp + fp + fn))
        dice.append(_ratio(2 * tp, 2 * tp + fp + fn))
        present.append(tp + fp + fn > 0)

    def mean(values):
        chosen = [v for v, keep in zip(values, present) if keep]
        return sum(chosen) / len(chosen)

    return MetricsReport(
        accuracy=int(np.trace(cm)) / total,
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        iou=tuple(iou),
        dice=tuple(dice),
        present=tuple(present),
        mean_precision=mean(precision),
        mean_f1=mean(f1),
        miou=mean(iou),
        mdc=mean(dice),
        evaluated_pixels=total,
    )
