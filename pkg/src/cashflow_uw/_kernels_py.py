"""Pure-NumPy implementations of the hot kernels.

Semantics (including summation order and tie-breaking) match the compiled
``_kernels`` module exactly, so either backend yields identical models.
"""

from __future__ import annotations

import numpy as np


def auroc_counts(scores, labels) -> tuple[int, int, int]:
    """Return ``(2*wins + ties, n_pos, n_neg)`` over all positive/negative pairs."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    pos_g = np.add.reduceat(y, starts) if len(s) else np.zeros(0, dtype=np.int64)
    size_g = np.diff(np.r_[starts, len(s)])
    neg_g = size_g - pos_g
    neg_below = np.cumsum(neg_g) - neg_g
    twice_u = int(np.sum(2 * pos_g * neg_below + pos_g * neg_g))
    n_pos = int(y.sum())
    return twice_u, n_pos, int(len(y) - n_pos)


def best_split(X, y, w, order, mask, features, min_leaf):
    """Best weighted-SSE split of the rows selected by ``mask``.

    ``order[f]`` lists row indices sorted by ``X[:, f]``. Returns
    ``(feature, threshold, gain)`` with ``feature == -1`` when no admissible
    split exists. Rows with ``x < threshold`` go left.
    """
    best_f, best_thr, best_gain = -1, 0.0, 0.0
    mask = np.asarray(mask, dtype=bool)
    for f in features:
        idx = order[f]
        idx = idx[mask[idx]]
        m = len(idx)
        if m < 2 * min_leaf or m < 2:
            continue
        xs = X[idx, f]
        ws = w[idx]
        cw = np.cumsum(ws)
        cs = np.cumsum(ws * y[idx])
        tw, ts = cw[-1], cs[-1]
        i = np.arange(m - 1)
        ok = (xs[:-1] < xs[1:]) & (i + 1 >= min_leaf) & (m - i - 1 >= min_leaf)
        wl = cw[:-1]
        wr = tw - wl
        ok &= (wl > 0) & (wr > 0)
        if not ok.any():
            continue
        sl = cs[:-1]
        sr = ts - sl
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sl * sl / wl + sr * sr / wr - ts * ts / tw
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            a, b = xs[k], xs[k + 1]
            thr = 0.5 * (a + b)
            if thr <= a:
                thr = b
            best_f, best_thr, best_gain = int(f), float(thr), float(gain[k])
    return best_f, best_thr, best_gain
