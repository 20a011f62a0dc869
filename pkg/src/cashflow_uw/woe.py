"""Binning, weight of evidence and information value.

For bin ``k`` of a feature, with ``N_g``/``N_b`` the total non-default and
default counts::

    dist_good = n_good / N_g          dist_bad = n_bad / N_b
    woe       = ln((dist_good + eps) / (dist_bad + eps)),  clamped to [-clamp, clamp]
    iv        = sum_k (dist_good - dist_bad) * woe

A positive WOE marks a bin that is relatively more common among
non-defaults. Interval bins are lower-inclusive, upper-exclusive. Every
feature also owns a ``missing`` bin for absent values (and, at transform
time, for categories never seen during training).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .errors import BinningError

DEFAULT_EPSILON = 1e-6
DEFAULT_CLAMP = 5.0
DEFAULT_K_INIT = 10
DEFAULT_MIN_BIN_COUNT = 5

IV_CLASSES = ("not_predictive", "weak", "medium", "strong", "suspicious")
_IV_EDGES = (0.02, 0.1, 0.3, 0.5)
_TRAIN_SPLIT = re.compile(r"train(?::[A-Za-z0-9_.=\-]+)*")


def iv_class(iv: float) -> str:
    for edge, name in zip(_IV_EDGES, IV_CLASSES):
        if iv < edge:
            return name
    return IV_CLASSES[-1]


def is_missing(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


@dataclass(frozen=True)
class BinDefinition:
    feature: str
    kind: str  # interval | category_group | missing
    lower: float = -math.inf
    upper: float = math.inf
    members: frozenset = frozenset()
    other: bool = False

    def __post_init__(self):
        if self.kind not in ("interval", "category_group", "missing"):
            raise BinningError("BAD_BIN", f"unknown bin kind {self.kind!r}")
        object.__setattr__(self, "members", frozenset(self.members))

    def contains(self, value) -> bool:
        if self.kind == "missing":
            return is_missing(value)
        if is_missing(value):
            return False
        if self.kind == "interval":
            return not isinstance(value, str) and self.lower <= value < self.upper
        return value in self.members

    @property
    def label(self) -> str:
        if self.kind == "missing":
            return "MISSING"
        if self.kind == "interval":
            return f"[{self.lower:.6g}, {self.upper:.6g})"
        names = ",".join(sorted(map(str, self.members)))
        return f"OTHER{{{names}}}" if self.other else f"{{{names}}}"

    def to_dict(self) -> dict:
        d = {"feature": self.feature, "kind": self.kind}
        if self.kind == "interval":
            d["lower"] = _enc_bound(self.lower)
            d["upper"] = _enc_bound(self.upper)
        elif self.kind == "category_group":
            d["members"] = sorted(map(str, self.members))
            d["other"] = self.other
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BinDefinition":
        if d["kind"] == "interval":
            return cls(d["feature"], "interval", _dec_bound(d["lower"]), _dec_bound(d["upper"]))
        if d["kind"] == "category_group":
            return cls(d["feature"], "category_group", members=frozenset(d["members"]),
                       other=bool(d.get("other", False)))
        return cls(d["feature"], "missing")


def _enc_bound(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _dec_bound(x) -> float:
    return float(x)


def _interval_bins(feature: str, cuts: Sequence[float]) -> list[BinDefinition]:
    edges = [-math.inf, *cuts, math.inf]
    return [BinDefinition(feature, "interval", lo, hi) for lo, hi in zip(edges, edges[1:])]


def _finite_values(values) -> np.ndarray:
    arr = np.array([np.nan if is_missing(v) else float(v) for v in values], dtype=np.float64)
    return arr


def quantile_bin(values: Sequence[float], k: int = DEFAULT_K_INIT, feature: str = "") -> list[BinDefinition]:
    """Equal-frequency bins with cuts at the ``i/k`` linear-interpolation quantiles.

    Duplicate cuts, and cuts at or below the minimum, are dropped, so the
    bin count shrinks when there are fewer distinct quantiles than ``k``.
    """
    if k < 2:
        raise BinningError("INVALID_PARAM", "k must be >= 2")
    arr = _finite_values(values)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        raise BinningError("EMPTY_INPUT", f"no non-missing values for {feature or 'feature'}")
    qs = np.quantile(arr, np.arange(1, k) / k, method="linear")
    lo = arr.min()
    cuts = sorted({float(q) for q in qs if q > lo})
    return _interval_bins(feature, cuts)


def _binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise BinningError("BAD_LABEL", "labels must be 0/1")
    y = y.astype(np.int64)
    if y.size == 0 or y.min() == y.max():
        raise BinningError("SINGLE_CLASS", "both classes are required")
    return y


def _woe_value(g, b, n_g, n_b, eps, clamp):
    w = math.log(g / n_g + eps) - math.log(b / n_b + eps)
    return min(max(w, -clamp), clamp)


def monotonic_bin(
    values: Sequence[float],
    labels: Sequence[int],
    k_init: int = DEFAULT_K_INIT,
    min_bin_count: int = DEFAULT_MIN_BIN_COUNT,
    feature: str = "",
    epsilon: float = DEFAULT_EPSILON,
    clamp: float = DEFAULT_CLAMP,
) -> list[BinDefinition]:
    """Supervised binning with monotone event rate.

    Starts from ``quantile_bin(values, k_init)`` and repeatedly merges the
    adjacent pair that most violates the monotone direction (the sign of the
    rank correlation between value and label) until event rates are strictly
    monotone and the WOE sequence, computed with ``epsilon``/``clamp``, is
    monotone too. Then bins short of ``min_bin_count`` goods or bads are
    merged into the neighbour with the closer event rate.
    """
    y_all = _binary_labels(labels)
    x_all = _finite_values(values)
    keep = ~np.isnan(x_all)
    x, y = x_all[keep], y_all[keep]
    if x.size == 0:
        raise BinningError("EMPTY_INPUT", f"no non-missing values for {feature or 'feature'}")
    n_b_tot, n_g_tot = int(y_all.sum()), int(len(y_all) - y_all.sum())

    cuts = [b.lower for b in quantile_bin(x, k_init, feature)[1:]]
    idx = np.searchsorted(np.asarray(cuts), x, side="right")
    nb = np.bincount(idx, weights=y, minlength=len(cuts) + 1).astype(np.int64)
    nt = np.bincount(idx, minlength=len(cuts) + 1).astype(np.int64)
    # segments: [lower_cut_index, bad, total]; empty bins cannot occur for quantile cuts
    segs = [[c, int(b), int(t)] for c, b, t in zip([None, *cuts], nb, nt) if t > 0]

    rho = spearmanr(x, y).statistic if x.size > 1 and np.ptp(x) > 0 and np.ptp(y) > 0 else 0.0
    sign = -1.0 if (rho is not None and not math.isnan(rho) and rho < 0) else 1.0

    def rate(s):
        return s[1] / s[2]

    def woe(s):
        return _woe_value(s[2] - s[1], s[1], n_g_tot, n_b_tot, epsilon, clamp)

    def merge(i):
        a, b = segs[i], segs[i + 1]
        segs[i:i + 2] = [[a[0], a[1] + b[1], a[2] + b[2]]]

    def short(s):
        return s[1] < min_bin_count or (s[2] - s[1]) < min_bin_count

    def monotone_pass():
        changed = False
        while len(segs) > 1:
            worst, worst_i = None, None
            for i in range(len(segs) - 1):
                diff = sign * (rate(segs[i]) - rate(segs[i + 1]))  # >= 0 is a violation
                woe_bad = sign * (woe(segs[i + 1]) - woe(segs[i])) > 0
                if (diff >= 0 or woe_bad) and (worst is None or diff > worst):
                    worst, worst_i = diff, i
            if worst_i is None:
                break
            merge(worst_i)
            changed = True
        return changed

    def count_pass():
        changed = False
        while len(segs) > 1:
            bad = [i for i, s in enumerate(segs) if short(s)]
            if not bad:
                break
            # smallest offending bin first; ties by position
            i = min(bad, key=lambda j: (segs[j][2], j))
            if i == 0:
                merge(0)
            elif i == len(segs) - 1:
                merge(i - 1)
            else:
                left = abs(rate(segs[i]) - rate(segs[i - 1]))
                right = abs(rate(segs[i]) - rate(segs[i + 1]))
                merge(i - 1 if left <= right else i)
            changed = True
        return changed

    monotone_pass()
    while count_pass() and monotone_pass():
        pass
    return _interval_bins(feature, [s[0] for s in segs[1:]])


def group_rare(
    categories: Sequence,
    labels: Sequence[int],
    min_bin_count: int = DEFAULT_MIN_BIN_COUNT,
    feature: str = "",
) -> list[BinDefinition]:
    """Pool categories with fewer than ``min_bin_count`` goods or bads into OTHER.

    Groups are ordered by descending total count (ties by name). When the
    pooled OTHER group holds fewer than ``min_bin_count`` observations it is
    folded into the smallest qualifying group.
    """
    y = np.asarray(labels).astype(np.int64)
    cats = [c for c in categories]
    if not cats:
        raise BinningError("EMPTY_INPUT", "no categories")
    total, bad = Counter(), Counter()
    for c, lab in zip(cats, y):
        if is_missing(c):
            continue
        total[c] += 1
        bad[c] += int(lab)
    if not total:
        raise BinningError("EMPTY_INPUT", "no non-missing categories")

    def ok(t, b):
        return b >= min_bin_count and t - b >= min_bin_count

    keep = [c for c in total if ok(total[c], bad[c])]
    rare = [c for c in total if c not in keep]
    groups = [(total[c], {c}, False) for c in keep]
    if rare:
        t_o = sum(total[c] for c in rare)
        # the pooled group only needs min_bin_count observations in total
        if t_o >= min_bin_count or not groups:
            groups.append((t_o, set(rare), True))
        else:
            j = min(range(len(groups)), key=lambda i: (groups[i][0], sorted(map(str, groups[i][1]))))
            t, members, _ = groups[j]
            groups[j] = (t + t_o, members | set(rare), True)
    groups.sort(key=lambda g: (-g[0], sorted(map(str, g[1]))))
    return [BinDefinition(feature, "category_group", members=frozenset(m), other=o) for _, m, o in groups]


@dataclass(frozen=True)
class BinStats:
    bin: BinDefinition
    n_good: int
    n_bad: int
    dist_good: float
    dist_bad: float
    woe: float

    def to_dict(self) -> dict:
        return {"bin": self.bin.to_dict(), "n_good": self.n_good, "n_bad": self.n_bad,
                "dist_good": self.dist_good, "dist_bad": self.dist_bad, "woe": self.woe}

    @classmethod
    def from_dict(cls, d: dict) -> "BinStats":
        return cls(BinDefinition.from_dict(d["bin"]), int(d["n_good"]), int(d["n_bad"]),
                   float(d["dist_good"]), float(d["dist_bad"]), float(d["woe"]))


def check_trained_on(trained_on: str) -> None:
    if not isinstance(trained_on, str) or not _TRAIN_SPLIT.fullmatch(trained_on):
        raise BinningError("LEAKAGE_GUARD",
                           f"WOE tables must be fitted on a training split, got trained_on={trained_on!r}")


@dataclass(frozen=True)
class WoeTable:
    bins: dict  # feature -> tuple[BinStats, ...]; insertion order is the feature order
    iv: dict
    iv_class: dict
    epsilon: float
    trained_on: str
    clamp: float = DEFAULT_CLAMP
    n_good: int = 0
    n_bad: int = 0
    _lookup: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        check_trained_on(self.trained_on)
        for f, v in self.iv.items():
            if self.iv_class[f] != iv_class(v):
                raise BinningError("BAD_TABLE", f"iv_class for {f} inconsistent with IV {v}")

    @property
    def features(self) -> list[str]:
        return list(self.bins)

    def subset(self, features: Sequence[str]) -> "WoeTable":
        return WoeTable({f: self.bins[f] for f in features}, {f: self.iv[f] for f in features},
                        {f: self.iv_class[f] for f in features}, self.epsilon, self.trained_on,
                        self.clamp, self.n_good, self.n_bad)

    def woe_of(self, feature: str, value) -> float:
        return self.bins[feature][self.bin_index(feature, value)].woe

    def bin_index(self, feature: str, value) -> int:
        """Index of the bin holding ``value``; unseen categories map to the missing bin."""
        stats = self.bins[feature]
        missing_i = None
        for i, s in enumerate(stats):
            if s.bin.kind == "missing":
                missing_i = i
            elif s.bin.contains(value):
                return i
        if is_missing(value) or (isinstance(value, str) and stats and stats[0].bin.kind == "category_group"):
            if missing_i is not None:
                return missing_i
        raise BinningError("UNBINNED_VALUE", f"{feature}={value!r} falls in no bin")

    def _tables(self):
        if self._lookup is None:
            lk = {}
            for f, stats in self.bins.items():
                intervals = [s for s in stats if s.bin.kind == "interval"]
                if intervals:
                    lk[f] = ("interval", np.array([s.bin.lower for s in intervals[1:]]),
                             np.array([s.woe for s in intervals]),
                             next(s.woe for s in stats if s.bin.kind == "missing"))
                else:
                    cmap = {m: s.woe for s in stats if s.bin.kind == "category_group" for m in s.bin.members}
                    lk[f] = ("category", cmap, None, next(s.woe for s in stats if s.bin.kind == "missing"))
            object.__setattr__(self, "_lookup", lk)
        return self._lookup

    def transform_matrix(self, rows: Sequence[Mapping], features: Optional[Sequence[str]] = None) -> np.ndarray:
        """WOE-encode many rows at once: shape ``(len(rows), n_features)``."""
        feats = list(features) if features is not None else self.features
        lk = self._tables()
        out = np.empty((len(rows), len(feats)), dtype=np.float64)
        for j, f in enumerate(feats):
            kind, a, b, miss = lk[f]
            col = [r.get(f) for r in rows]
            if kind == "interval":
                if any(isinstance(v, str) for v in col):
                    bad = next(v for v in col if isinstance(v, str))
                    raise BinningError("UNBINNED_VALUE", f"{f}={bad!r} falls in no bin")
                x = _finite_values(col)
                nan = np.isnan(x)
                idx = np.searchsorted(a, np.where(nan, 0.0, x), side="right")
                out[:, j] = np.where(nan, miss, b[idx])
            else:
                vals = []
                for v in col:
                    if is_missing(v):
                        vals.append(miss)
                    elif isinstance(v, str):
                        vals.append(a.get(v, miss))
                    else:
                        raise BinningError("UNBINNED_VALUE", f"{f}={v!r} falls in no bin")
                out[:, j] = vals
        return out

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "clamp": self.clamp,
            "trained_on": self.trained_on,
            "n_good": self.n_good,
            "n_bad": self.n_bad,
            "features": [
                {"feature": f, "iv": self.iv[f], "iv_class": self.iv_class[f],
                 "bins": [s.to_dict() for s in stats]}
                for f, stats in self.bins.items()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WoeTable":
        bins, iv, cls_ = {}, {}, {}
        for fd in d["features"]:
            f = fd["feature"]
            bins[f] = tuple(BinStats.from_dict(b) for b in fd["bins"])
            iv[f] = float(fd["iv"])
            cls_[f] = fd["iv_class"]
        return cls(bins, iv, cls_, float(d["epsilon"]), d["trained_on"], float(d["clamp"]),
                   int(d["n_good"]), int(d["n_bad"]))


def row_values(r) -> Mapping:
    """Feature mapping of a row given either as a mapping or a FeatureVector."""
    return r if isinstance(r, Mapping) else r.values


def _rows_of(data) -> list[Mapping]:
    return [row_values(r) for r in data]


def compute_woe_table(
    bins: Mapping[str, Sequence[BinDefinition]],
    data: Sequence,
    labels: Sequence[int],
    epsilon: float = DEFAULT_EPSILON,
    trained_on: str = "train",
    clamp: float = DEFAULT_CLAMP,
) -> WoeTable:
    """Count goods and bads per bin and derive WOE, IV and the IV class.

    ``data`` is a sequence of feature mappings (or :class:`FeatureVector`).
    Every value must fall into a bin of its feature; a missing bin is added
    when the definitions lack one.
    """
    if not epsilon > 0:
        raise BinningError("INVALID_PARAM", "epsilon must be > 0")
    check_trained_on(trained_on)
    rows = _rows_of(data)
    if not rows:
        raise BinningError("EMPTY_INPUT", "no data")
    y = _binary_labels(labels)
    if len(y) != len(rows):
        raise BinningError("SHAPE_MISMATCH", "data and labels differ in length")
    n_b = int(y.sum())
    n_g = len(y) - n_b

    out_bins, out_iv, out_cls = {}, {}, {}
    for f, defs in bins.items():
        defs = list(defs)
        if not any(d.kind == "missing" for d in defs):
            defs.append(BinDefinition(f, "missing"))
        good = [0] * len(defs)
        bad = [0] * len(defs)
        for r, lab in zip(rows, y):
            v = r.get(f)
            for i, d in enumerate(defs):
                if d.contains(v):
                    if lab:
                        bad[i] += 1
                    else:
                        good[i] += 1
                    break
            else:
                raise BinningError("UNBINNED_VALUE", f"{f}={v!r} falls in no bin")
        stats = []
        iv = 0.0
        for d, g, b in zip(defs, good, bad):
            dg, db = g / n_g, b / n_b
            w = _woe_value(g, b, n_g, n_b, epsilon, clamp)
            iv += (dg - db) * w
            stats.append(BinStats(d, g, b, dg, db, w))
        out_bins[f] = tuple(stats)
        out_iv[f] = iv
        out_cls[f] = iv_class(iv)
    return WoeTable(out_bins, out_iv, out_cls, epsilon, trained_on, clamp, n_g, n_b)


def transform_woe(vector, table: WoeTable) -> np.ndarray:
    """Replace each feature value by its bin's WOE, in the table's feature order."""
    values = row_values(vector)
    return np.array([table.woe_of(f, values.get(f)) for f in table.features], dtype=np.float64)


def fit_woe_table(
    data: Sequence,
    labels: Sequence[int],
    features: Sequence[str],
    categorical: Iterable[str] = (),
    k_init: int = DEFAULT_K_INIT,
    min_bin_count: int = DEFAULT_MIN_BIN_COUNT,
    epsilon: float = DEFAULT_EPSILON,
    trained_on: str = "train",
    clamp: float = DEFAULT_CLAMP,
) -> WoeTable:
    """Bin every feature on ``data`` and count WOE in one go.

    Numeric features get :func:`monotonic_bin`, categorical ones
    :func:`group_rare`.
    """
    check_trained_on(trained_on)
    rows = _rows_of(data)
    categorical = set(categorical)
    bins = {}
    for f in features:
        col = [r.get(f) for r in rows]
        if f in categorical:
            bins[f] = group_rare([c for c in col], labels, min_bin_count, feature=f)
        else:
            bins[f] = monotonic_bin(col, labels, k_init, min_bin_count, feature=f, epsilon=epsilon, clamp=clamp)
    return compute_woe_table(bins, rows, labels, epsilon, trained_on, clamp)
