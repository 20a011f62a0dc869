"""Evaluation protocol: stratified splits, k-fold CV, random search, ablations, reports.

Every learned artifact (WOE tables, feature selection, hyperparameters,
model weights) is fitted on training rows only. Validation rows and their
labels reach nothing except the final ``score`` call.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ExperimentError
from .features import APP_FEATURES, BANK_FEATURES, CANONICAL_FEATURES, CATEGORICAL_FEATURES
from .jsonl import canonical_json
from .metrics import RocCurve, auroc, roc_curve
from .scorecard import DEFAULT_LAMBDA, fit_logistic
from .trees import BENCHMARKS, fit_benchmark
from .woe import DEFAULT_K_INIT, DEFAULT_MIN_BIN_COUNT, fit_woe_table, row_values

MODEL_KINDS = ("LR", "RF", "GB", "AB")
FEATURE_SETS = {
    "application_only": APP_FEATURES,
    "bank_only": BANK_FEATURES,
    "combined": CANONICAL_FEATURES,
}
IV_SELECT_MIN = 0.02

# hyperparameter spaces; ``{"dist": ...}`` entries are sampled, scalars are fixed
DEFAULT_SPACES = {
    "LR": {"lam": {"dist": "loguniform", "low": 0.01, "high": 100.0}},
    "RF": {"n_estimators": {"dist": "int", "low": 50, "high": 500},
           "max_depth": {"dist": "int", "low": 2, "high": 8}},
    "GB": {"n_estimators": {"dist": "int", "low": 50, "high": 500},
           "max_depth": {"dist": "int", "low": 2, "high": 8},
           "learning_rate": {"dist": "loguniform", "low": 0.01, "high": 0.3}},
    "AB": {"n_estimators": {"dist": "int", "low": 50, "high": 500}},
}


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitPlan:
    seed: int = 0
    train_fraction: float = 0.60
    stratified: bool = True
    fold_count: int = 5

    def __post_init__(self):
        if not 0 < self.train_fraction <= 1:
            raise ExperimentError("INVALID_PARAM", "train_fraction must be in (0, 1]")
        if self.fold_count < 2:
            raise ExperimentError("INVALID_PARAM", "fold_count must be >= 2")


def _class_groups(labels, stratified: bool) -> list[np.ndarray]:
    y = np.asarray(labels)
    if not stratified:
        return [np.arange(len(y))]
    return [np.flatnonzero(y == 1), np.flatnonzero(y != 1)]


def stratified_split(labels, train_fraction: float = 0.60, seed: int = 0,
                     stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle each class and send ``round(frac * n_class)`` of it to train."""
    rng = np.random.default_rng(seed)
    train, valid = [], []
    for idx in _class_groups(labels, stratified):
        idx = rng.permutation(idx)
        k = int(math.floor(train_fraction * len(idx) + 0.5))
        train.append(idx[:k])
        valid.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(valid))


def stratified_kfold(labels, k: int = 5, seed: int = 0,
                     stratified: bool = True) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, validation) index pairs; each class is shuffled then dealt round-robin.

    The dealing position carries over between classes so fold sizes also
    differ by at most one.
    """
    y = np.asarray(labels)
    if k < 2 or k > len(y):
        raise ExperimentError("INVALID_PARAM", f"cannot make {k} folds of {len(y)} rows")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    pos = 0
    for idx in _class_groups(y, stratified):
        idx = rng.permutation(idx)
        fold_of[idx] = (pos + np.arange(len(idx))) % k
        pos = (pos + len(idx)) % k
    out = []
    for f in range(k):
        out.append((np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)))
    return out


# ---------------------------------------------------------------- model pipelines

def params_hash(params: Mapping) -> str:
    return hashlib.sha256(canonical_json(dict(params)).encode()).hexdigest()[:12]


@dataclass
class Encoded:
    """Rows encoded by an encoder fitted on one training fold."""

    X: np.ndarray
    features: list
    state: dict


class Pipeline:
    """Fold-local encoder plus model for one model kind.

    ``LR``: monotone/rare-category binning, WOE encoding, selection of
    features with IV >= 0.02, then the penalized logistic fit. Tree
    ensembles: raw numeric features plus WOE-encoded categoricals.
    """

    def __init__(self, kind: str, features: Sequence[str], k_init: int = DEFAULT_K_INIT,
                 min_bin_count: int = DEFAULT_MIN_BIN_COUNT, seed: int = 0):
        if kind not in MODEL_KINDS:
            raise ExperimentError("INVALID_PARAM", f"unknown model kind {kind!r}")
        self.kind = kind
        self.features = list(features)
        self.k_init = k_init
        self.min_bin_count = min_bin_count
        self.seed = seed

    def fit_encoder(self, rows, y, tag: str = "train"):
        if self.kind == "LR":
            table = fit_woe_table(rows, y, self.features, CATEGORICAL_FEATURES, self.k_init,
                                  self.min_bin_count, trained_on=tag)
            keep = [f for f in self.features if table.iv[f] >= IV_SELECT_MIN]
            if not keep:
                keep = [max(self.features, key=lambda f: table.iv[f])]
            return table.subset(keep)
        cats = [f for f in self.features if f in CATEGORICAL_FEATURES]
        table = fit_woe_table(rows, y, cats, CATEGORICAL_FEATURES, self.k_init, self.min_bin_count,
                              trained_on=tag) if cats else None
        return table

    def encode(self, encoder, rows) -> np.ndarray:
        if self.kind == "LR":
            return encoder.transform_matrix(rows)
        cols = []
        for f in self.features:
            if f in CATEGORICAL_FEATURES:
                cols.append(encoder.transform_matrix(rows, [f])[:, 0])
            else:
                cols.append(np.array([float(r[f]) for r in rows]))
        return np.column_stack(cols) if cols else np.zeros((len(rows), 0))

    def fit_model(self, X, y, params: Mapping):
        if self.kind == "LR":
            fit = fit_logistic(X, y, lam=float(params.get("lam", DEFAULT_LAMBDA)))
            return _LinearScorer(fit.theta)
        return fit_benchmark(self.kind, X, y, dict(params), seed=self.seed)


class _LinearScorer:
    def __init__(self, theta):
        self.theta = np.asarray(theta)

    def score(self, X) -> np.ndarray:
        return self.theta[0] + np.asarray(X) @ self.theta[1:]


@dataclass
class FittedPipeline:
    pipeline: Pipeline
    encoder: object
    model: object
    params: dict

    def score(self, rows) -> np.ndarray:
        return self.model.score(self.pipeline.encode(self.encoder, rows))

    def fingerprint(self) -> str:
        """Hash of everything learned (encoder tables, hyperparameters, weights)."""
        h = hashlib.sha256()
        if self.encoder is not None:
            h.update(canonical_json(self.encoder.to_dict()).encode())
        h.update(canonical_json(self.params).encode())
        h.update(_model_bytes(self.model))
        return h.hexdigest()


def _model_bytes(model) -> bytes:
    if isinstance(model, _LinearScorer):
        return model.theta.tobytes()
    parts = []
    trees = getattr(model, "trees", None) or getattr(model, "stumps", [])
    for t in trees:
        for a in (t.feature, t.threshold, t.left, t.right, t.value):
            parts.append(np.ascontiguousarray(a).tobytes())
    for name in ("alphas", "init_"):
        if hasattr(model, name):
            parts.append(np.asarray(getattr(model, name), dtype=np.float64).tobytes())
    return b"".join(parts)


def _rows(data) -> list[Mapping]:
    return [row_values(r) for r in data]


# ---------------------------------------------------------------- search

def sample_params(space: Mapping, rng: np.random.Generator) -> dict:
    out = {}
    for name in sorted(space):
        spec = space[name]
        if not isinstance(spec, Mapping):
            out[name] = spec
            continue
        dist = spec.get("dist")
        if dist == "int":
            out[name] = int(rng.integers(int(spec["low"]), int(spec["high"]) + 1))
        elif dist == "uniform":
            out[name] = float(rng.uniform(spec["low"], spec["high"]))
        elif dist == "loguniform":
            out[name] = float(math.exp(rng.uniform(math.log(spec["low"]), math.log(spec["high"]))))
        elif dist == "choice":
            vals = list(spec["values"])
            out[name] = vals[int(rng.integers(len(vals)))]
        else:
            raise ExperimentError("INVALID_PARAM", f"unknown distribution {dist!r} for {name}")
    return out


@dataclass
class SearchResult:
    params: dict
    cv_auroc: float
    trials: list  # [(params, mean auroc)] in sampling order, deduplicated


def _prepared_folds(pipe: Pipeline, rows, y, folds, tag: str):
    prepared = []
    for i, (tr, va) in enumerate(folds):
        rows_tr = [rows[j] for j in tr]
        enc = pipe.fit_encoder(rows_tr, y[tr], f"{tag}:inner={i}")
        prepared.append((pipe.encode(enc, rows_tr), y[tr], pipe.encode(enc, [rows[j] for j in va]), y[va]))
    return prepared


def random_search(kind: str, data, labels, space: Optional[Mapping] = None, trials: int = 50,
                  folds: int = 5, seed: int = 0, features: Sequence[str] = CANONICAL_FEATURES,
                  tag: str = "train") -> SearchResult:
    """Sample ``trials`` parameter sets and keep the best by stratified k-fold CV AUROC.

    Repeated samples are evaluated once. Ties go to the set sampled first.
    Encoders are fitted once per inner fold and shared by all trials.
    """
    space = DEFAULT_SPACES[kind] if space is None else space
    if not space:
        raise ExperimentError("INVALID_PARAM", "empty search space")
    rows = _rows(data)
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    candidates, seen = [], set()
    for _ in range(trials):
        p = sample_params(space, rng)
        key = canonical_json(p)
        if key not in seen:
            seen.add(key)
            candidates.append(p)
    pipe = Pipeline(kind, features, seed=seed)
    prepared = _prepared_folds(pipe, rows, y, stratified_kfold(y, folds, seed), tag)
    best, best_auc, history = None, -math.inf, []
    for p in candidates:
        aucs = [auroc(yv, pipe.fit_model(Xt, yt, p).score(Xv)) for Xt, yt, Xv, yv in prepared]
        m = float(np.mean(aucs))
        history.append((p, m))
        if m > best_auc:
            best, best_auc = p, m
    return SearchResult(best, best_auc, history)


def fit_pipeline(kind: str, data, labels, features: Sequence[str], params: Mapping, seed: int = 0,
                 tag: str = "train") -> FittedPipeline:
    rows = _rows(data)
    y = np.asarray(labels)
    pipe = Pipeline(kind, features, seed=seed)
    enc = pipe.fit_encoder(rows, y, tag)
    model = pipe.fit_model(pipe.encode(enc, rows), y, params)
    return FittedPipeline(pipe, enc, model, dict(params))


def cv_auroc(kind: str, data, labels, features: Sequence[str] = CANONICAL_FEATURES, folds: int = 5,
             seed: int = 0, params: Optional[Mapping] = None, space: Optional[Mapping] = None,
             trials: int = 0, inner_folds: int = 5):
    """Outer stratified k-fold CV AUROC.

    With ``trials > 0`` a random search runs inside every training fold
    (nested CV); otherwise ``params`` (default: the model defaults) is used.
    Returns ``(per-fold AUROCs, per-fold params, fitted pipelines, out-of-fold scores)``.
    """
    rows = _rows(data)
    y = np.asarray(labels)
    aucs, chosen, fitted = [], [], []
    oof = np.zeros(len(y))
    for i, (tr, va) in enumerate(stratified_kfold(y, folds, seed)):
        rows_tr = [rows[j] for j in tr]
        if trials > 0:
            p = random_search(kind, rows_tr, y[tr], space, trials, inner_folds, seed + 1000 * (i + 1),
                              features, tag=f"train:fold={i}").params
        else:
            p = dict(params or {})
        fp = fit_pipeline(kind, rows_tr, y[tr], features, p, seed, tag=f"train:fold={i}")
        s = fp.score([rows[j] for j in va])
        oof[va] = s
        aucs.append(auroc(y[va], s))
        chosen.append(p)
        fitted.append(fp)
    return aucs, chosen, fitted, oof


# ---------------------------------------------------------------- ablation

@dataclass
class AblationResult:
    model_kind: str
    feature_set: str
    auroc_mean: float
    auroc_per_fold: list
    seed: int
    params_per_fold: list = field(default_factory=list)
    validation_auroc: Optional[float] = None
    validation_params: Optional[dict] = None
    curve: Optional[RocCurve] = None
    fingerprints: list = field(default_factory=list)  # per fold, then the holdout refit

    def __post_init__(self):
        if abs(self.auroc_mean - float(np.mean(self.auroc_per_fold))) > 1e-12:
            raise ExperimentError("INCONSISTENT", "auroc_mean must be the mean of auroc_per_fold")


@dataclass
class IvEntry:
    feature: str
    iv: float
    iv_class: str
    rank: int


@dataclass
class AblationReport:
    results: list
    iv_report: list
    plan: SplitPlan
    n_train: int
    n_valid: int


def iv_ranking(table) -> list[IvEntry]:
    order = sorted(table.features, key=lambda f: (-table.iv[f], f))
    return [IvEntry(f, table.iv[f], table.iv_class[f], i + 1) for i, f in enumerate(order)]


def run_ablation(data, labels, plan: SplitPlan = SplitPlan(), kinds: Sequence[str] = MODEL_KINDS,
                 feature_sets: Sequence[str] = tuple(FEATURE_SETS), spaces: Optional[Mapping] = None,
                 trials: int = 50, inner_folds: int = 5,
                 split: Optional[tuple] = None) -> AblationReport:
    """CV every (model kind, feature set) on the training split, then score the holdout.

    With ``plan.train_fraction == 1`` there is no holdout and ROC curves use
    pooled out-of-fold scores. ``split`` fixes the ``(train, holdout)``
    indices instead of drawing them from ``plan``.
    """
    rows = _rows(data)
    y = np.asarray(labels)
    for fs in feature_sets:
        if fs not in FEATURE_SETS:
            raise ExperimentError("INVALID_PARAM", f"unknown feature set {fs!r}")
    if split is not None:
        tr, va = (np.asarray(a, dtype=np.int64) for a in split)
    elif plan.train_fraction < 1:
        tr, va = stratified_split(y, plan.train_fraction, plan.seed, plan.stratified)
    else:
        tr, va = np.arange(len(y)), np.array([], dtype=np.int64)
    rows_tr, y_tr = [rows[j] for j in tr], y[tr]
    rows_va, y_va = [rows[j] for j in va], y[va]
    spaces = {**DEFAULT_SPACES, **(spaces or {})}

    results = []
    for kind in kinds:
        for fs in feature_sets:
            feats = FEATURE_SETS[fs]
            aucs, chosen, fitted, oof = cv_auroc(kind, rows_tr, y_tr, feats, plan.fold_count, plan.seed,
                                                 space=spaces[kind], trials=trials, inner_folds=inner_folds)
            res = AblationResult(kind, fs, float(np.mean(aucs)), aucs, plan.seed, chosen,
                                 fingerprints=[fp.fingerprint() for fp in fitted])
            if len(va):
                if trials > 0:
                    p = random_search(kind, rows_tr, y_tr, spaces[kind], trials, inner_folds, plan.seed,
                                      feats).params
                else:
                    p = {}
                fp = fit_pipeline(kind, rows_tr, y_tr, feats, p, plan.seed)
                s = fp.score(rows_va)
                res.validation_auroc = auroc(y_va, s)
                res.validation_params = p
                res.curve = roc_curve(y_va, s)
                res.fingerprints.append(fp.fingerprint())
            else:
                res.curve = roc_curve(y_tr, oof)
            results.append(res)

    full = fit_woe_table(rows_tr, y_tr, CANONICAL_FEATURES, CATEGORICAL_FEATURES, trained_on="train")
    return AblationReport(results, iv_ranking(full), plan, len(tr), len(va))


# ---------------------------------------------------------------- reports

RESULTS_COLUMNS = ("model", "feature_set", "fold", "auroc", "seed", "params_hash")
IV_COLUMNS = ("feature", "iv", "iv_class", "rank")


def results_csv(report: AblationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_COLUMNS)
    for r in report.results:
        for i, (a, p) in enumerate(zip(r.auroc_per_fold, r.params_per_fold)):
            w.writerow((r.model_kind, r.feature_set, i, repr(float(a)), r.seed, params_hash(p)))
        if r.validation_auroc is not None:
            w.writerow((r.model_kind, r.feature_set, "validation", repr(float(r.validation_auroc)), r.seed,
                        params_hash(r.validation_params)))
    return buf.getvalue()


def iv_csv(report: AblationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(IV_COLUMNS)
    for e in report.iv_report:
        w.writerow((e.feature, repr(float(e.iv)), e.iv_class, e.rank))
    return buf.getvalue()


def _svg_figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cashflow-uw"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(plt, fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def roc_report(report: AblationReport, out_dir: str | Path, feature_set: str = "combined") -> dict:
    """Write ``results.csv``, ``iv_report.csv``, ``roc.svg`` and ``iv.svg`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / "results.csv", "iv": out / "iv_report.csv",
             "roc_plot": out / "roc.svg", "iv_plot": out / "iv.svg"}
    paths["results"].write_text(results_csv(report), encoding="utf-8")
    paths["iv"].write_text(iv_csv(report), encoding="utf-8")

    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(5, 5))
    for r in report.results:
        if r.feature_set != feature_set or r.curve is None:
            continue
        shown = r.validation_auroc if r.validation_auroc is not None else r.auroc_mean
        ax.plot(r.curve.fpr, r.curve.tpr, label=f"{r.model_kind} (AUROC {shown:.3f})")
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.legend(loc="lower right")
    _save_svg(plt, fig, paths["roc_plot"])

    fig, ax = plt.subplots(figsize=(6, 5))
    entries = report.iv_report
    ax.barh([e.feature for e in entries][::-1], [e.iv for e in entries][::-1])
    ax.set_xlabel("Information value")
    fig.tight_layout()
    _save_svg(plt, fig, paths["iv_plot"])
    return paths


__all__ = [
    "AblationReport", "AblationResult", "BENCHMARKS", "FEATURE_SETS", "MODEL_KINDS", "SplitPlan",
    "cv_auroc", "fit_pipeline", "iv_ranking", "random_search", "roc_report", "run_ablation",
    "stratified_kfold", "stratified_split",
]
