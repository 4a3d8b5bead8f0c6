"""Binary segmentation metrics from integer confusion counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

METRIC_NAMES = ("DSC", "SE", "SP", "ACC", "mIOU")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion_counts(prob, mask, threshold: float = 0.5) -> ConfusionCounts:
    """Threshold a probability map against a {0,1} mask of the same shape."""
    p = prob.data if isinstance(prob, Tensor) else np.asarray(prob)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if p.shape != m.shape:
        raise ShapeError(f"prediction and mask shapes differ: {p.shape} vs {m.shape}")
    pred = p > threshold
    gt = m > 0.5
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & gt)),
        tn=int(np.count_nonzero(~pred & ~gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
    )


def _ratio(num: int, den: int) -> float:
    # 0/0 counts as a perfect match on an empty class
    if den == 0:
        return 1.0 if num == 0 else 0.0
    return num / den


def compute_metrics(c: ConfusionCounts) -> dict[str, float]:
    """DSC, SE, SP, ACC, mIOU as plain ratios of the counts."""
    if c.total == 0:
        raise ShapeError("metrics need at least one pixel of counts")
    return {
        "DSC": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "SE": _ratio(c.tp, c.tp + c.fn),
        "SP": _ratio(c.tn, c.tn + c.fp),
        "ACC": _ratio(c.tp + c.tn, c.total),
        "mIOU": _ratio(c.tp, c.tp + c.fp + c.fn),
    }
