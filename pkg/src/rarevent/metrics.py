"""Confusion counts, sensitivity/specificity, ROC curve, AUC and Peirce index.

A score at or above the threshold predicts an event.  The ROC curve is
evaluated at every distinct observed score plus a ``+inf`` sentinel, which
is exact because sensitivity and specificity are step functions of the
threshold.  Area and Peirce computations are carried out on integer counts
so ties are resolved exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyInput, OneClassOnly


@dataclass(frozen=True)
class ScoredPair:
    score: float
    outcome: int
    time_index: int = -1
    individual_id: str = ""


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int


class SensSpec(NamedTuple):
    sensitivity: float
    specificity: float
    degenerate: bool


def as_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Accept a list of :class:`ScoredPair` or a ``(scores, labels)`` tuple."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and not isinstance(pairs[0], ScoredPair):
        s, y = pairs
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=np.int64)
    else:
        s = np.fromiter((p.score for p in pairs), dtype=float)
        y = np.fromiter((p.outcome for p in pairs), dtype=np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def confusion(pairs, gamma: float) -> Confusion:
    s, y = as_arrays(pairs)
    if s.size == 0:
        raise EmptyInput("no scored pairs")
    pred = s >= gamma
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return Confusion(tp, fp, tn, fn)


def sens_spec(counts: Confusion) -> SensSpec:
    """Sensitivity TP/(TP+FN) and specificity TN/(TN+FP).

    An empty denominator gives 0 with ``degenerate=True``.
    """
    tp, fp, tn, fn = counts
    degenerate = False
    if tp + fn > 0:
        sens = tp / (tp + fn)
    else:
        sens, degenerate = 0.0, True
    if tn + fp > 0:
        spec = tn / (tn + fp)
    else:
        spec, degenerate = 0.0, True
    return SensSpec(sens, spec, degenerate)


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray  # +inf first, then distinct scores descending
    tp: np.ndarray
    fp: np.ndarray
    n_pos: int
    n_neg: int

    @property
    def tpr(self) -> np.ndarray:
        return self.tp / self.n_pos

    @property
    def fpr(self) -> np.ndarray:
        return self.fp / self.n_neg

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, s in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(s))])


def roc(pairs) -> RocCurve:
    s, y = as_arrays(pairs)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly(f"ROC needs both classes (events={n_pos}, non-events={n_neg})")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp_cum = np.cumsum(y_sorted == 1)
    fp_cum = np.cumsum(y_sorted == 0)
    # last position of each run of equal scores
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    thresholds = np.r_[np.inf, s_sorted[last]]
    tp = np.r_[0, tp_cum[last]].astype(np.int64)
    fp = np.r_[0, fp_cum[last]].astype(np.int64)
    return RocCurve(thresholds, tp, fp, n_pos, n_neg)


def auc(pairs) -> float:
    return roc_auc(roc(pairs))


def roc_auc(curve: RocCurve) -> float:
    # twice the area times n_pos * n_neg, as an exact integer
    dfp = np.diff(curve.fp)
    twice = int(np.sum(dfp * (curve.tp[1:] + curve.tp[:-1])))
    return twice / (2 * curve.n_pos * curve.n_neg)


class Peirce(NamedTuple):
    index: float
    gamma_star: float
    sensitivity: float
    specificity: float


def peirce(pairs) -> Peirce:
    """Maximum of sensitivity + specificity - 1 over thresholds.

    Ties go to the smallest threshold.
    """
    return roc_peirce(roc(pairs))


def roc_peirce(curve: RocCurve) -> Peirce:
    # J * n_pos * n_neg, exact
    j = curve.tp * curve.n_neg - curve.fp * curve.n_pos
    best = int(j.max())
    at = int(np.flatnonzero(j == best)[-1])
    sens = curve.tp[at] / curve.n_pos
    spec = 1 - curve.fp[at] / curve.n_neg
    return Peirce(best / (curve.n_pos * curve.n_neg), float(curve.thresholds[at]), sens, spec)


def min_manhattan_to_corner(curve: RocCurve) -> float:
    """Smallest L1 distance from (0, 1) to an ROC vertex."""
    return float(np.min(curve.fpr + (1 - curve.tpr)))


@dataclass(frozen=True)
class Summary:
    auc: float
    peirce: float
    gamma_star: float
    sens_at_star: float
    spec_at_star: float


def summarize(pairs) -> Summary:
    curve = roc(pairs)
    p = roc_peirce(curve)
    return Summary(roc_auc(curve), p.index, p.gamma_star, p.sensitivity, p.specificity)


def scored_pairs(scores: Sequence[float], outcomes, times=None, ids=None) -> list[ScoredPair]:
    n = len(scores)
    times = [-1] * n if times is None else times
    ids = [""] * n if ids is None else ids
    return [ScoredPair(float(s), int(y), int(t), str(i))
            for s, y, t, i in zip(scores, outcomes, times, ids)]
