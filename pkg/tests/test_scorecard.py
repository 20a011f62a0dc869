import math
import warnings

import numpy as np
import pytest

from cashflow_uw.errors import ConvergenceWarning, ModelError
from cashflow_uw.scorecard import (
    RiskTier,
    ScorecardModel,
    classify_rating,
    fit_logistic,
    fit_scorecard,
    gradient,
    logit,
    objective,
    sigmoid,
    train,
)
from cashflow_uw.woe import BinDefinition, compute_woe_table

from oracles import auroc_pairs, central_diff, penalized_loglik


def ln3_table():
    vals = [0.0] * 62 + [1.0] * 48
    labels = [0] * 60 + [1] * 2 + [0] * 40 + [1] * 8
    bins = {"x": [BinDefinition("x", "interval", -math.inf, 0.5), BinDefinition("x", "interval", 0.5, math.inf)]}
    return compute_woe_table(bins, [{"x": v} for v in vals], labels)


def model(beta0, betas, table=None):
    table = table or ln3_table()
    return ScorecardModel(beta0, tuple(betas), 1.0, table, tuple(table.features), "m", "t", {})


def test_symmetric_data_zero_coefficients():
    X = np.array([[0.3, -1.0], [1.2, 0.5], [-0.7, 2.0]])
    Xs = np.vstack([X, X])
    y = np.array([0, 0, 0, 1, 1, 1])
    fit = fit_logistic(Xs, y, lam=0.0)
    assert np.allclose(fit.theta, 0.0, atol=1e-12)


def test_separable_finite_and_perfect():
    X = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    fit = fit_logistic(X, y, lam=0.1)
    assert np.all(np.isfinite(fit.theta)) and fit.converged
    s = fit.theta[0] + X @ fit.theta[1:]
    assert auroc_pairs(y, s) == 1.0


def test_gradient_matches_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    y = (rng.uniform(size=30) < 0.4).astype(float)
    for _ in range(5):
        theta = rng.normal(size=4)
        lam = float(rng.uniform(0, 2))
        fd = central_diff(lambda t: penalized_loglik(t, X.tolist(), y.tolist(), lam), list(theta))
        g = gradient(theta, X, y, lam)
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-6)
        assert objective(theta, X, y, lam) == pytest.approx(penalized_loglik(theta, X.tolist(), y.tolist(), lam))


def test_objective_ascent_and_determinism():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 5))
    y = (rng.uniform(size=200) < 1 / (1 + np.exp(-X[:, 0]))).astype(float)
    a = fit_logistic(X, y, lam=0.5)
    b = fit_logistic(X, y, lam=0.5)
    assert a.theta.tobytes() == b.theta.tobytes()
    assert all(h2 >= h1 for h1, h2 in zip(a.history, a.history[1:]))
    assert a.converged and a.grad_norm < 1e-8


def test_penalty_shrinks_norm():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(150, 4))
    y = (rng.uniform(size=150) < 1 / (1 + np.exp(-X @ [1.0, -0.5, 0.2, 0.0]))).astype(float)
    norms = [np.linalg.norm(fit_logistic(X, y, lam=lam).theta[1:]) for lam in (0, 0.01, 0.1, 1, 10, 100)]
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_calibration_unpenalized():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 3))
    y = (rng.uniform(size=300) < 0.2).astype(float)
    fit = fit_logistic(X, y, lam=0.0)
    p = sigmoid(fit.theta[0] + X @ fit.theta[1:])
    assert abs(p.mean() - y.mean()) < 1e-6


def test_single_class():
    with pytest.raises(ModelError) as ei:
        fit_logistic(np.zeros((3, 1)), np.zeros(3))
    assert ei.value.code == "SINGLE_CLASS"


def test_no_convergence_flagged():
    rng = np.random.default_rng(5)
    rows = [{"x": float(v)} for v in rng.normal(size=100)]
    y = (rng.uniform(size=100) < 0.3).astype(int)
    t = compute_woe_table({"x": [BinDefinition("x", "interval", -math.inf, 0.0),
                                 BinDefinition("x", "interval", 0.0, math.inf)]}, rows, y)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        m = train(rows, y, t, lam=1.0, tol=1e-30, max_iter=1)
    assert any(issubclass(x.category, ConvergenceWarning) for x in w)
    assert m.training_metrics["converged"] == 0.0


def test_predict_examples():
    zero = model(0.0, [0.0])
    assert zero.predict_proba({"x": 0.0}) == 0.5 and zero.log_odds({"x": 1.0}) == 0.0
    one = model(0.0, [1.0])
    z = one.log_odds({"x": 0.0})
    assert z == pytest.approx(1.0986, abs=1e-4)
    assert model(math.log(3), [0.0]).predict_proba({"x": 0.0}) == pytest.approx(0.75, abs=1e-15)
    far = model(-1000.0, [0.0])
    assert far.predict_proba({"x": 0.0}) == 0.0
    assert sigmoid(1000.0) == 1.0 and sigmoid(np.array([-800.0, 800.0])).tolist() == [0.0, 1.0]


def test_logit_consistency():
    for b0 in np.linspace(-13, 13, 27):
        m = model(float(b0), [0.7])
        p = m.predict_proba({"x": 1.0})
        assert logit(p) == pytest.approx(m.log_odds({"x": 1.0}), abs=1e-9)


@pytest.mark.parametrize("pd,tier", [(0.02, "Low"), (0.05, "Medium"), (0.1499, "Medium"), (0.15, "High"),
                                     (0.99, "High")])
def test_classify(pd, tier):
    assert classify_rating(pd, (0.05, 0.15)).tier == RiskTier(tier)


@pytest.mark.parametrize("th", [(0.2, 0.1), (0.1, 0.1), (-0.1, 0.5), (0.1, 1.5)])
def test_invalid_thresholds(th):
    with pytest.raises(ModelError) as ei:
        classify_rating(0.5, th)
    assert ei.value.code == "INVALID_THRESHOLDS"


def test_fit_scorecard_document_round_trip(small_portfolio):
    p, rows = small_portfolio
    m = fit_scorecard(rows, p.labels, trained_at="2024-07-01T00:00:00+00:00")
    assert m.version.startswith("sc-")
    assert 0.5 < m.training_metrics["train_auroc"] <= 1.0
    back = ScorecardModel.from_document(m.to_document())
    assert back.artifact_bytes() == m.artifact_bytes()
    np.testing.assert_array_equal(back.predict_proba_many(rows), m.predict_proba_many(rows))
    assert m.predict_proba(rows[0]) == pytest.approx(m.predict_proba_many(rows[:1])[0], abs=1e-15)
    again = fit_scorecard(rows, p.labels, trained_at="2024-07-01T00:00:00+00:00")
    assert again.artifact_bytes() == m.artifact_bytes()


def test_bad_document():
    with pytest.raises(ModelError) as ei:
        ScorecardModel.from_document({"beta0": 0})
    assert ei.value.code == "SCHEMA_INVALID"
