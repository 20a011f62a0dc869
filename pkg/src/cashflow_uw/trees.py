"""From-scratch tree ensembles: random forest, gradient boosting, AdaBoost.

All three are built on one weighted least-squares CART grower; on 0/1
targets the squared-error reduction is proportional to the Gini gain, so
the same grower serves classification trees and boosting regressors. The
split search runs in :mod:`cashflow_uw.kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import ExperimentError
from .scorecard import sigmoid


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X) -> np.ndarray:
        """Leaf index for every row."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[active, self.feature[n]] < self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))


def presort(X) -> np.ndarray:
    return np.argsort(np.asarray(X, dtype=np.float64), axis=0, kind="mergesort").T.copy()


def grow_tree(
    X,
    y,
    w,
    max_depth: int,
    min_samples_leaf: int = 1,
    max_features: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    leaf_value: Optional[Callable[[np.ndarray], float]] = None,
    order: Optional[np.ndarray] = None,
) -> Tree:
    """Grow a depth-limited CART tree minimizing weighted squared error.

    Rows with zero weight are ignored. ``max_features`` features are drawn
    per node without replacement from ``rng``. ``leaf_value`` maps the row
    indices of a leaf to its output (default: weighted mean of ``y``).
    ``order`` is the per-feature argsort of ``X`` (``presort(X)``), reusable
    across trees grown on the same matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, d = X.shape
    if order is None:
        order = presort(X)
    k = d if max_features is None else max(1, min(d, int(max_features)))
    all_features = np.arange(d, dtype=np.int64)

    feat, thr, left, right, val = [], [], [], [], []

    def default_leaf(idx):
        ws = w[idx]
        return float(np.dot(ws, y[idx]) / ws.sum())

    leaf_fn = leaf_value or default_leaf

    def new_node():
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(0.0)
        return len(feat) - 1

    root = new_node()
    stack = [(root, np.flatnonzero(w > 0), 0)]
    while stack:
        node, idx, depth = stack.pop()
        val[node] = leaf_fn(idx)
        if depth >= max_depth or len(idx) < 2 * min_samples_leaf:
            continue
        if k < d:
            cand = np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)
        else:
            cand = all_features
        mask = np.zeros(n, dtype=np.uint8)
        mask[idx] = 1
        f, t, gain = kernels.best_split(X, y, w, order, mask, cand, min_samples_leaf)
        if f < 0 or gain <= 1e-12:
            continue
        go_left = X[idx, f] < t
        li, ri = idx[go_left], idx[~go_left]
        feat[node], thr[node] = f, t
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(val))


def _check_binary(y) -> np.ndarray:
    y = np.asarray(y)
    if y.size == 0 or y.min() == y.max():
        raise ExperimentError("SINGLE_CLASS", "both classes are required")
    return (y != 0).astype(np.float64)


def _resolve_max_features(spec, d: int) -> Optional[int]:
    if spec is None:
        return None
    if spec == "sqrt":
        return max(1, int(math.sqrt(d)))
    if spec == "log2":
        return max(1, int(math.log2(d)))
    if isinstance(spec, float) and 0 < spec <= 1:
        return max(1, int(spec * d))
    if isinstance(spec, (int, np.integer)) and spec >= 1:
        return int(spec)
    raise ExperimentError("INVALID_PARAM", f"bad max_features {spec!r}")


class RandomForest:
    """Bagged CART trees with per-node feature subsampling; score = mean leaf event rate."""

    defaults = {"n_estimators": 100, "max_depth": 6, "min_samples_leaf": 1,
                "max_features": "sqrt", "bootstrap": True}

    def __init__(self, n_estimators=100, max_depth=6, min_samples_leaf=1, max_features="sqrt",
                 bootstrap=True, seed=0):
        if n_estimators < 1 or max_depth < 1 or min_samples_leaf < 1:
            raise ExperimentError("INVALID_PARAM", "n_estimators, max_depth, min_samples_leaf must be >= 1")
        self.n_estimators = int(n_estimators)
        self.max_depth = int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)
        self.max_features = max_features
        self.bootstrap = bool(bootstrap)
        self.seed = seed
        self.trees: list[Tree] = []

    def fit(self, X, y) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = _check_binary(y)
        rng = np.random.default_rng(self.seed)
        n, d = X.shape
        mf = _resolve_max_features(self.max_features, d)
        order = presort(X)
        self.trees = []
        for _ in range(self.n_estimators):
            if self.bootstrap:
                w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
            else:
                w = np.ones(n)
            self.trees.append(grow_tree(X, y, w, self.max_depth, self.min_samples_leaf, mf, rng, order=order))
        return self

    def score(self, X) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees], axis=0)


class GradientBoosting:
    """Stagewise regression trees on the log-odds with shrinkage (binomial deviance)."""

    defaults = {"n_estimators": 100, "learning_rate": 0.1, "max_depth": 3,
                "min_samples_leaf": 1, "subsample": 1.0}

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=3, min_samples_leaf=1,
                 subsample=1.0, seed=0):
        if n_estimators < 0 or max_depth < 1 or min_samples_leaf < 1:
            raise ExperimentError("INVALID_PARAM", "bad tree size parameters")
        if not 0 < learning_rate <= 1 or not 0 < subsample <= 1:
            raise ExperimentError("INVALID_PARAM", "learning_rate and subsample must be in (0, 1]")
        self.n_estimators = int(n_estimators)
        self.learning_rate = float(learning_rate)
        self.max_depth = int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)
        self.subsample = float(subsample)
        self.seed = seed
        self.init_ = 0.0
        self.trees: list[Tree] = []

    def fit(self, X, y) -> "GradientBoosting":
        X = np.asarray(X, dtype=np.float64)
        y = _check_binary(y)
        rng = np.random.default_rng(self.seed)
        n = len(y)
        p0 = y.mean()
        self.init_ = math.log(p0 / (1 - p0))
        f = np.full(n, self.init_)
        order = presort(X)
        self.trees = []
        for _ in range(self.n_estimators):
            p = sigmoid(f)
            resid = y - p
            hess = p * (1 - p)
            if self.subsample < 1:
                w = np.zeros(n)
                w[rng.choice(n, size=max(2, int(self.subsample * n)), replace=False)] = 1.0
            else:
                w = np.ones(n)

            def newton_leaf(idx, resid=resid, hess=hess, w=w):
                den = float(np.dot(w[idx], hess[idx]))
                return float(np.dot(w[idx], resid[idx]) / den) if den > 1e-12 else 0.0

            tree = grow_tree(X, resid, w, self.max_depth, self.min_samples_leaf, None, rng, newton_leaf, order)
            self.trees.append(tree)
            f = f + self.learning_rate * tree.predict(X)
        return self

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        f = np.full(X.shape[0], self.init_)
        for t in self.trees:
            f = f + self.learning_rate * t.predict(X)
        return f

    def score(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


class AdaBoost:
    """Discrete two-class SAMME boosting of decision stumps.

    Score is ``sigmoid(sum_t alpha_t h_t(x))`` with ``h_t`` in {-1, +1}.
    Boosting stops early once a stump is no better than chance.
    """

    defaults = {"n_estimators": 50, "learning_rate": 1.0}
    MAX_ALPHA = 10.0

    def __init__(self, n_estimators=50, learning_rate=1.0, seed=0):
        if n_estimators < 1 or not learning_rate > 0:
            raise ExperimentError("INVALID_PARAM", "n_estimators >= 1 and learning_rate > 0 required")
        self.n_estimators = int(n_estimators)
        self.learning_rate = float(learning_rate)
        self.seed = seed
        self.stumps: list[Tree] = []
        self.alphas: list[float] = []

    def fit(self, X, y) -> "AdaBoost":
        X = np.asarray(X, dtype=np.float64)
        y = _check_binary(y)
        n = len(y)
        sgn = 2 * y - 1
        w = np.full(n, 1.0 / n)
        order = presort(X)
        self.stumps, self.alphas = [], []
        for _ in range(self.n_estimators):
            stump = grow_tree(X, y, w, 1, 1, None, None, order=order)
            h = np.where(stump.predict(X) > 0.5, 1.0, -1.0)
            miss = h != sgn
            err = float(w[miss].sum() / w.sum())
            if err >= 0.5 - 1e-12:
                break
            alpha = self.MAX_ALPHA if err <= 0 else min(self.MAX_ALPHA,
                                                         self.learning_rate * math.log((1 - err) / err))
            self.stumps.append(stump)
            self.alphas.append(alpha)
            if err <= 0:
                break
            w = w * np.exp(alpha * miss)
            w = w / w.sum()
        return self

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        margin = np.zeros(X.shape[0])
        for a, s in zip(self.alphas, self.stumps):
            margin += a * np.where(s.predict(X) > 0.5, 1.0, -1.0)
        return margin

    def score(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


BENCHMARKS = {"RF": RandomForest, "GB": GradientBoosting, "AB": AdaBoost}


def fit_benchmark(kind: str, X, y, params: Optional[dict] = None, seed: int = 0):
    """Fit one of the benchmark ensembles; returns an object with ``score(X)``."""
    try:
        cls = BENCHMARKS[kind]
    except KeyError:
        raise ExperimentError("INVALID_PARAM", f"unknown benchmark kind {kind!r}")
    params = dict(params or {})
    unknown = set(params) - set(cls.defaults)
    if unknown:
        raise ExperimentError("INVALID_PARAM", f"unknown {kind} parameters {sorted(unknown)}")
    return cls(**{**cls.defaults, **params}, seed=seed).fit(X, y)
