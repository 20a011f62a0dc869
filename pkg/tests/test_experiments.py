import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cashflow_uw.errors import ExperimentError
from cashflow_uw.experiments import (
    FEATURE_SETS,
    AblationResult,
    Pipeline,
    SplitPlan,
    cv_auroc,
    fit_pipeline,
    iv_csv,
    params_hash,
    random_search,
    results_csv,
    roc_report,
    run_ablation,
    sample_params,
    stratified_kfold,
    stratified_split,
)
from cashflow_uw.features import APP_FEATURES, BANK_FEATURES
from cashflow_uw.metrics import auroc


@given(st.integers(20, 700), st.floats(0.01, 0.5), st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_split_proportional(n, rate, seed):
    y = (np.random.default_rng(seed).uniform(size=n) < rate).astype(int)
    tr, va = stratified_split(y, 0.6, seed)
    assert len(np.intersect1d(tr, va)) == 0 and len(tr) + len(va) == n
    for cls in (0, 1):
        k = int((y == cls).sum())
        assert abs(int((y[tr] == cls).sum()) - 0.6 * k) <= 0.5 + 1e-9


@given(st.integers(10, 400), st.integers(2, 8), st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_kfold_balanced(n, k, seed):
    y = (np.random.default_rng(seed).uniform(size=n) < 0.2).astype(int)
    folds = stratified_kfold(y, k, seed)
    seen = np.concatenate([va for _, va in folds])
    assert sorted(seen.tolist()) == list(range(n))
    events = [int(y[va].sum()) for _, va in folds]
    sizes = [len(va) for _, va in folds]
    assert max(events) - min(events) <= 1
    assert max(sizes) - min(sizes) <= 1
    for tr, va in folds:
        assert len(np.intersect1d(tr, va)) == 0


def test_kfold_invalid():
    with pytest.raises(ExperimentError):
        stratified_kfold([0, 1], 3)


def test_sample_params_kinds():
    rng = np.random.default_rng(0)
    space = {"a": {"dist": "int", "low": 2, "high": 4}, "b": {"dist": "loguniform", "low": 0.01, "high": 1.0},
             "c": {"dist": "choice", "values": ["x", "y"]}, "d": 7, "e": {"dist": "uniform", "low": 0, "high": 1}}
    for _ in range(50):
        p = sample_params(space, rng)
        assert 2 <= p["a"] <= 4 and 0.01 <= p["b"] <= 1 and p["c"] in ("x", "y") and p["d"] == 7
    with pytest.raises(ExperimentError):
        sample_params({"a": {"dist": "zipf"}}, rng)


def test_params_hash_stable():
    assert params_hash({"b": 1, "a": 2}) == params_hash({"a": 2, "b": 1})
    assert len(params_hash({})) == 12


def test_random_search_single_point_and_determinism(small_portfolio):
    p, rows = small_portfolio
    r = random_search("LR", rows, p.labels, {"lam": 2.0}, trials=5, seed=1)
    assert r.params == {"lam": 2.0} and len(r.trials) == 1
    a = random_search("LR", rows, p.labels, trials=6, seed=4)
    b = random_search("LR", rows, p.labels, trials=6, seed=4)
    assert a.params == b.params and a.cv_auroc == b.cv_auroc
    assert a.cv_auroc == max(m for _, m in a.trials)
    with pytest.raises(ExperimentError):
        random_search("LR", rows, p.labels, {}, trials=2)


def test_widening_space_never_hurts(small_portfolio):
    p, rows = small_portfolio
    narrow = {"lam": {"dist": "choice", "values": [1.0, 10.0]}}
    wide = {"lam": {"dist": "choice", "values": [0.01, 0.1, 1.0, 10.0, 100.0]}}
    n_best, w_best = [], []
    for seed in range(10):
        n = random_search("LR", rows, p.labels, narrow, trials=40, seed=seed, features=BANK_FEATURES)
        w = random_search("LR", rows, p.labels, wide, trials=40, seed=seed, features=BANK_FEATURES)
        n_best.append(n.cv_auroc)
        w_best.append(w.cv_auroc)
    assert np.mean(w_best) >= np.mean(n_best)


def test_pipeline_feature_selection(small_portfolio):
    p, rows = small_portfolio
    fp = fit_pipeline("LR", rows, p.labels, APP_FEATURES, {"lam": 1.0})
    assert set(fp.encoder.features) <= set(APP_FEATURES)
    fp = fit_pipeline("RF", rows, p.labels, FEATURE_SETS["combined"], {"n_estimators": 10})
    assert fp.encoder.features == ["location", "sector_code", "customer_classification"]
    X = fp.pipeline.encode(fp.encoder, rows)
    assert X.shape == (len(rows), 17)
    with pytest.raises(ExperimentError):
        Pipeline("SVM", APP_FEATURES)


def test_cv_auroc_outputs(small_portfolio):
    p, rows = small_portfolio
    aucs, params, fitted, oof = cv_auroc("LR", rows, p.labels, FEATURE_SETS["combined"], 5, 0, {"lam": 1.0})
    assert len(aucs) == 5 and all(0 <= a <= 1 for a in aucs)
    assert all(f.encoder.trained_on == f"train:fold={i}" for i, f in enumerate(fitted))
    folds = stratified_kfold(p.labels, 5, 0)
    y = np.asarray(p.labels)
    for (tr, va), a in zip(folds, aucs):
        assert auroc(y[va], oof[va]) == a


def test_ablation_result_mean_invariant():
    with pytest.raises(ExperimentError):
        AblationResult("LR", "combined", 0.7, [0.6, 0.7], 0)


def test_ablation_small_run_and_reports(small_portfolio, tmp_path):
    p, rows = small_portfolio
    rep = run_ablation(rows, p.labels, SplitPlan(seed=0), kinds=["LR", "AB"], trials=2, inner_folds=3)
    assert rep.n_train + rep.n_valid == len(rows)
    assert [(r.model_kind, r.feature_set) for r in rep.results] == [
        (k, fs) for k in ("LR", "AB") for fs in ("application_only", "bank_only", "combined")]
    for r in rep.results:
        assert r.validation_auroc is not None and len(r.fingerprints) == 6
    assert [e.rank for e in rep.iv_report] == list(range(1, 18))
    ivs = [e.iv for e in rep.iv_report]
    assert ivs == sorted(ivs, reverse=True)

    rows_csv = list(csv.reader(io.StringIO(results_csv(rep))))
    assert rows_csv[0] == ["model", "feature_set", "fold", "auroc", "seed", "params_hash"]
    assert len(rows_csv) == 1 + 6 * 6
    assert list(csv.reader(io.StringIO(iv_csv(rep))))[0] == ["feature", "iv", "iv_class", "rank"]

    a = roc_report(rep, tmp_path / "a")
    b = roc_report(rep, tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    assert a["roc_plot"].read_text().lstrip().startswith("<?xml")


def test_ablation_unknown_feature_set(small_portfolio):
    p, rows = small_portfolio
    with pytest.raises(ExperimentError):
        run_ablation(rows, p.labels, kinds=["LR"], feature_sets=["everything"], trials=0)


def test_random_scorer_near_half():
    rng = np.random.default_rng(0)
    y = (rng.uniform(size=10_000) < 0.3).astype(int)
    assert abs(auroc(y, rng.uniform(size=10_000)) - 0.5) < 0.02


def test_identical_models_identical_entries(small_portfolio):
    p, rows = small_portfolio
    a = cv_auroc("GB", rows, p.labels, BANK_FEATURES, 3, 0, {"n_estimators": 10})
    b = cv_auroc("GB", rows, p.labels, BANK_FEATURES, 3, 0, {"n_estimators": 10})
    assert a[0] == b[0]
    assert [f.fingerprint() for f in a[2]] == [f.fingerprint() for f in b[2]]


def test_monotone_transform_invariance():
    rng = np.random.default_rng(1)
    y = (rng.uniform(size=500) < 0.3).astype(int)
    s = rng.normal(size=500)
    assert auroc(y, s) == auroc(y, np.exp(3 * s) + 1)
