"""Evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ParameterError


def r2_score(preds, truths) -> float:
    """``1 - SS_res / SS_tot``; undefined when the truths are constant."""
    p = np.asarray(preds, dtype=float)
    t = np.asarray(truths, dtype=float)
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0:
        raise ParameterError("R2 undefined for zero-variance truths")
    return 1.0 - float(((t - p) ** 2).sum()) / ss_tot


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def confusion(flags, labels) -> Confusion:
    f = np.asarray(flags).astype(bool)
    y = np.asarray(labels).astype(bool)
    if f.shape != y.shape:
        raise ParameterError("flags and labels differ in shape")
    return Confusion(int((f & y).sum()), int((f & ~y).sum()), int((~f & y).sum()), int((~f & ~y).sum()))


def coverage(intervals, truths) -> float:
    """Fraction of truths inside ``[lo, hi]`` (rows of ``intervals``)."""
    iv = np.asarray(intervals, dtype=float)
    t = np.asarray(truths, dtype=float)
    if t.size == 0:
        raise ParameterError("coverage of an empty set")
    return float(np.mean((t >= iv[:, 0]) & (t <= iv[:, 1])))
