"""Confusion counts, F1 and false positive rate.

``f1`` and ``fpr`` return ``None`` when their denominator is zero: the metric
is not defined for that confusion matrix, which is different from a score of 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

Number = Union[float, Fraction]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def confusion(predictions: Sequence, truth: Sequence) -> ConfusionMatrix:
    """Labels are booleans or 0/1 with 1 meaning malicious."""
    p = np.asarray(predictions).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    return ConfusionMatrix(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    )


def f1(cm: ConfusionMatrix, exact: bool = False) -> Optional[Number]:
    """tp / (0.5 * (fp + fn) + tp)."""
    if cm.tp + cm.fp + cm.fn == 0:
        return None
    value = Fraction(cm.tp) / (Fraction(cm.fp + cm.fn, 2) + cm.tp)
    return value if exact else float(value)


def fpr(cm: ConfusionMatrix, exact: bool = False) -> Optional[Number]:
    """fp / (fp + tn), computed over benign samples only."""
    if cm.fp + cm.tn == 0:
        return None
    value = Fraction(cm.fp, cm.fp + cm.tn)
    return value if exact else float(value)
