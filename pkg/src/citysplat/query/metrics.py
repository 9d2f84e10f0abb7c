from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BinaryScores:
    iou: float
    accuracy: float
    precision: float
    recall: float

    def as_dict(self) -> dict[str, float]:
        return {"iou": self.iou, "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall}


def _ratio(num: int, den: int, empty: float) -> float:
    return empty if den == 0 else num / den


def eval_binary(pred: np.ndarray, gt: np.ndarray) -> BinaryScores:
    """Confusion-matrix scores of one binary prediction.

    Empty prediction and empty ground truth count as perfect agreement for
    IoU; precision and recall are 1.0 when their denominator is empty and
    nothing was missed or invented.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return BinaryScores(
        iou=_ratio(tp, tp + fp + fn, 1.0),
        accuracy=_ratio(tp + tn, pred.size, 1.0),
        precision=_ratio(tp, tp + fp, 1.0 if fn == 0 else 0.0),
        recall=_ratio(tp, tp + fn, 1.0 if fp == 0 else 0.0),
    )


@dataclass
class FineReport:
    per_class_iou: dict[str, float | None] = field(default_factory=dict)
    per_class_precision: dict[str, float | None] = field(default_factory=dict)
    absent: list[str] = field(default_factory=list)

    @property
    def miou(self) -> float:
        vals = [v for v in self.per_class_iou.values() if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def as_dict(self) -> dict:
        return {
            "miou": self.miou,
            "per_class_iou": self.per_class_iou,
            "per_class_precision": self.per_class_precision,
            "absent": self.absent,
        }


def eval_fine(pred: dict[str, np.ndarray], gt: dict[str, np.ndarray]) -> FineReport:
    """Per-class IoU/precision; classes with no ground-truth pixels are reported absent (None)."""
    if set(pred) != set(gt):
        raise ValueError("prediction and ground-truth class lists differ")
    rep = FineReport()
    for cls in pred:
        if not np.asarray(gt[cls], dtype=bool).any():
            rep.per_class_iou[cls] = None
            rep.per_class_precision[cls] = None
            rep.absent.append(cls)
            continue
        s = eval_binary(pred[cls], gt[cls])
        rep.per_class_iou[cls] = s.iou
        rep.per_class_precision[cls] = s.precision
    return rep
