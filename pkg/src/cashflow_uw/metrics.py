"""ROC curves and AUROC.

Ties receive half credit. :func:`auroc` counts pairs through tie groups;
:func:`roc_curve` integrates the curve with the trapezoid rule. Both are
carried out in integer arithmetic and divided once, so they agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ExperimentError


def _check(labels, scores):
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ExperimentError("SHAPE_MISMATCH", "labels and scores must be 1-D of equal length")
    if not np.all(np.isfinite(s)):
        raise ExperimentError("NON_FINITE_SCORE", "scores must be finite")
    y = (y != 0).astype(np.int64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ExperimentError("SINGLE_CLASS", "AUROC needs both classes")
    return y, s


def auroc(labels, scores) -> float:
    y, s = _check(labels, scores)
    twice_u, n_pos, n_neg = kernels.auroc_counts(s, y)
    return twice_u / (2 * n_pos * n_neg)


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auroc: float


def roc_curve(labels, scores) -> RocCurve:
    """ROC points at every distinct score, from (0, 0) to (1, 1).

    ``thresholds[i]`` is the cut ``score >= t`` that produces point ``i``;
    the first threshold is ``+inf``.
    """
    y, s = _check(labels, scores)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.r_[0, np.cumsum(y)[last]]
    fp = np.r_[0, np.cumsum(1 - y)[last]]
    n_pos, n_neg = int(tp[-1]), int(fp[-1])
    # integer trapezoid: sum of dFP * (TP_i + TP_{i-1}) equals 2*wins + ties
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return RocCurve(
        thresholds=np.r_[np.inf, s[last]],
        tpr=tp / n_pos,
        fpr=fp / n_neg,
        auroc=twice_area / (2 * n_pos * n_neg),
    )
