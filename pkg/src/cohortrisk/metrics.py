"""Classification and contingency-table metrics.

ROC area is computed from integer concordance counts, so it equals the
Mann-Whitney statistic divided by ``n_pos * n_neg`` exactly, ties scoring
one half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from ._rng import substream
from ._validation import check_scores_labels
from .errors import NoCrossing, TooFewSamples, ZeroMargin


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _counts_by_threshold(scores, labels):
    """Cumulative (tp, fp) counts at each distinct score, highest first."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    lab = labels[order]
    distinct = np.r_[True, s[1:] != s[:-1]]
    group = np.cumsum(distinct) - 1
    n_groups = int(group[-1]) + 1
    pos = np.bincount(group, weights=lab, minlength=n_groups).astype(np.int64)
    neg = np.bincount(group, weights=1 - lab, minlength=n_groups).astype(np.int64)
    return s[distinct], np.cumsum(pos), np.cumsum(neg)


def roc_auc(scores, labels) -> RocCurve:
    scores, labels = check_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    thr, tp, fp = _counts_by_threshold(scores, labels)
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    # twice the trapezoid area in count units, an exact integer
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    return RocCurve(fp / n_neg, tp / n_pos, np.r_[np.inf, thr], auc)


def mann_whitney_auc(scores, labels) -> float:
    """Pairwise concordance by brute force. Quadratic, for checking."""
    scores, labels = check_scores_labels(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 2 * int(np.sum(pos[:, None] > neg[None, :])) + int(np.sum(pos[:, None] == neg[None, :]))
    return wins / (2 * pos.size * neg.size)


@dataclass(frozen=True)
class ThresholdSweep:
    """Sensitivity, specificity and PPV over a descending threshold grid.

    PPV is NaN where nothing is predicted positive.
    """

    thresholds: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    ppv: np.ndarray

    def rows(self):
        for t, se, sp, pv in zip(self.thresholds, self.sensitivity, self.specificity, self.ppv):
            yield float(t), float(se), float(sp), (None if np.isnan(pv) else float(pv))


def default_grid(scores) -> np.ndarray:
    return np.unique(np.r_[0.0, 1.0, np.asarray(scores, dtype=float)])[::-1]


def threshold_sweep(scores, labels, grid: Sequence[float] | None = None) -> ThresholdSweep:
    """Sweep the rule ``positive iff score >= threshold`` over ``grid``.

    The default grid is every distinct score plus 0 and 1.
    """
    scores, labels = check_scores_labels(scores, labels)
    grid = default_grid(scores) if grid is None else np.sort(np.asarray(grid, dtype=float))[::-1]
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    pos_sorted = np.sort(scores[labels == 1])
    neg_sorted = np.sort(scores[labels == 0])
    tp = n_pos - np.searchsorted(pos_sorted, grid, side="left")
    fp = n_neg - np.searchsorted(neg_sorted, grid, side="left")
    predicted = tp + fp
    with np.errstate(invalid="ignore", divide="ignore"):
        ppv = np.where(predicted > 0, tp / np.maximum(predicted, 1), np.nan)
    return ThresholdSweep(grid, tp / n_pos, (n_neg - fp) / n_neg, ppv)


@dataclass(frozen=True)
class Intersection:
    cutoff: float
    value: float
    ppv: float | None


def _lerp(a, b, frac):
    return a + (b - a) * frac


def sens_spec_intersection(sweep: ThresholdSweep) -> Intersection:
    """Where the sensitivity and specificity curves cross.

    Walks thresholds upward from the lowest, finds the first adjacent pair
    where ``sens - spec`` changes sign, and interpolates linearly.
    """
    order = np.argsort(sweep.thresholds, kind="mergesort")
    t = sweep.thresholds[order]
    se = sweep.sensitivity[order]
    sp = sweep.specificity[order]
    pv = sweep.ppv[order]
    diff = se - sp
    if t.size == 0 or diff[0] < 0:
        raise NoCrossing("sensitivity does not start above specificity")
    for i in range(t.size):
        if diff[i] == 0:
            return Intersection(float(t[i]), float(se[i]), None if np.isnan(pv[i]) else float(pv[i]))
        if i + 1 < t.size and diff[i] > 0 and diff[i + 1] < 0:
            frac = diff[i] / (diff[i] - diff[i + 1])
            a, b = pv[i], pv[i + 1]
            if np.isnan(a) and np.isnan(b):
                ppv = None
            elif np.isnan(a) or np.isnan(b):
                ppv = float(b if np.isnan(a) else a)
            else:
                ppv = float(_lerp(a, b, frac))
            return Intersection(float(_lerp(t[i], t[i + 1], frac)), float(_lerp(se[i], se[i + 1], frac)), ppv)
    raise NoCrossing("sensitivity and specificity never cross")


@dataclass(frozen=True)
class ContingencyTable:
    """2x2 counts: a/b = cases with/without the feature, c/d = controls."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def n(self) -> int:
        return self.a + self.b + self.c + self.d

    @classmethod
    def from_counts(cls, case_with, control_with, n_cases, n_controls) -> "ContingencyTable":
        return cls(case_with, n_cases - case_with, control_with, n_controls - control_with)


def case_control_ratio(table: ContingencyTable) -> float:
    """Cases with the feature per control with it.

    ``inf`` when only cases have it, ``nan`` when nobody does.
    """
    if table.c == 0:
        return math.inf if table.a > 0 else math.nan
    return table.a / table.c


def chi_square_yates(table: ContingencyTable) -> tuple[float, float]:
    """Yates-corrected Pearson chi-square on one degree of freedom."""
    a, b, c, d = table.a, table.b, table.c, table.d
    n = table.n
    margins = (a + b) * (c + d) * (a + c) * (b + d)
    if n == 0 or margins == 0:
        raise ZeroMargin("a row or column total is zero")
    dev = abs(a * d - b * c)
    if dev <= n / 2:
        return 0.0, 1.0
    stat = n * (dev - n / 2) ** 2 / margins
    return float(stat), float(chi2.sf(stat, 1))


def kfold_split(n: int, k: int, labels, seed: int) -> list[np.ndarray]:
    """Stratified k-fold partition of ``range(n)``.

    Each class is shuffled and dealt round-robin, continuing the rotation
    from one class to the next, so fold sizes differ by at most one both
    overall and within each class.
    """
    labels = np.asarray(labels).ravel()
    if labels.size != n:
        raise ValueError("labels length must equal n")
    if k < 2 or k > n:
        raise TooFewSamples(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = substream(seed, "kfold")
    order = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        order.append(idx[rng.permutation(idx.size)])
    dealt = np.concatenate(order)
    folds = [np.sort(dealt[i::k]) for i in range(k)]
    return folds
