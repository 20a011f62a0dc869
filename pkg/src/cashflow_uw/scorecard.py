"""L2-penalized logistic regression over WOE features.

The objective maximized is::

    L(b0, beta) = sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] - lam * ||beta||^2

with the intercept ``b0`` left unpenalized. The solver is a damped Newton
iteration from zero with step halving (every accepted step is an ascent
step), falling back to a gradient step when the Hessian is singular.
"""

from __future__ import annotations

import enum
import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConvergenceWarning, ModelError
from .jsonl import canonical_json
from .metrics import auroc
from .woe import WoeTable, row_values, transform_woe

DEFAULT_LAMBDA = 1.0
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
DEFAULT_THRESHOLDS = (0.05, 0.15)
MAX_HALVINGS = 60


def sigmoid(z):
    """Numerically stable logistic function (scalar or array)."""
    if np.ndim(z) == 0:
        z = float(z)
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def objective(theta, X, y, lam: float) -> float:
    """Penalized log-likelihood at ``theta = (b0, beta...)``."""
    Z = _design(X)
    z = Z @ theta
    ll = float(np.sum(y * z - np.logaddexp(0.0, z)))
    return ll - lam * float(theta[1:] @ theta[1:])


def gradient(theta, X, y, lam: float) -> np.ndarray:
    Z = _design(X)
    g = Z.T @ (y - sigmoid(Z @ theta))
    g[1:] -= 2.0 * lam * theta[1:]
    return g


def hessian(theta, X, y, lam: float) -> np.ndarray:
    Z = _design(X)
    p = sigmoid(Z @ theta)
    H = -(Z.T * (p * (1.0 - p))) @ Z
    H[1:, 1:] -= 2.0 * lam * np.eye(Z.shape[1] - 1)
    return H


@dataclass
class LogisticFit:
    theta: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def fit_logistic(X, y, lam: float = DEFAULT_LAMBDA, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER) -> LogisticFit:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise ModelError("INVALID_PARAM", "lambda must be >= 0")
    if y.size == 0 or y.min() == y.max():
        raise ModelError("SINGLE_CLASS", "both classes are required")
    theta = np.zeros(X.shape[1] + 1)
    obj = objective(theta, X, y, lam)
    history = [obj]
    g = gradient(theta, X, y, lam)
    it = 0
    while np.max(np.abs(g)) >= tol and it < max_iter:
        H = hessian(theta, X, y, lam)
        try:
            step = np.linalg.solve(-H, g)
            if not np.all(np.isfinite(step)) or float(step @ g) <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            # gradient ascent scaled by the curvature bound n/4 + 2*lam
            step = g / (0.25 * X.shape[0] + 2.0 * lam + 1e-12)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = theta + t * step
            cand_obj = objective(cand, X, y, lam)
            if cand_obj >= obj:
                break
            t *= 0.5
        else:
            break  # no ascent possible at machine precision
        theta, obj = cand, cand_obj
        history.append(obj)
        g = gradient(theta, X, y, lam)
        it += 1
    gn = float(np.max(np.abs(g)))
    return LogisticFit(theta, obj, gn, it, gn < tol, history)


class RiskTier(str, enum.Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"

    @property
    def severity(self) -> int:
        return ("Low", "Medium", "High").index(self.value)


@dataclass(frozen=True)
class RiskRating:
    tier: RiskTier
    pd: Optional[float] = None

    def to_dict(self) -> dict:
        return {"tier": self.tier.value, "pd": self.pd}

    @classmethod
    def from_dict(cls, d: dict) -> "RiskRating":
        pd = d.get("pd")
        return cls(RiskTier(d["tier"]), None if pd is None else float(pd))


def classify_rating(pd: float, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> RiskRating:
    t_low, t_high = thresholds
    if not 0.0 <= t_low < t_high <= 1.0:
        raise ModelError("INVALID_THRESHOLDS", f"need 0 <= t_low < t_high <= 1, got {thresholds}")
    if pd < t_low:
        tier = RiskTier.LOW
    elif pd < t_high:
        tier = RiskTier.MEDIUM
    else:
        tier = RiskTier.HIGH
    return RiskRating(tier, float(pd))


@dataclass(frozen=True)
class ScorecardModel:
    beta0: float
    betas: tuple
    lam: float
    woe_table: WoeTable
    feature_order: tuple
    version: str
    trained_at: str
    training_metrics: dict
    thresholds: tuple = DEFAULT_THRESHOLDS
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.betas) == len(self.feature_order) == len(self.woe_table.features)):
            raise ModelError("SCHEMA_INVALID", "betas, feature_order and woe_table disagree in length")
        if list(self.feature_order) != self.woe_table.features:
            raise ModelError("SCHEMA_INVALID", "feature_order must match woe_table feature order")
        if self.lam < 0:
            raise ModelError("SCHEMA_INVALID", "lambda must be >= 0")

    def log_odds(self, vector) -> float:
        x = transform_woe(vector, self.woe_table)
        return float(self.beta0 + np.dot(self.betas, x))

    def predict_proba(self, vector) -> float:
        return sigmoid(self.log_odds(vector))

    def log_odds_many(self, rows) -> np.ndarray:
        rows = [row_values(r) for r in rows]
        X = self.woe_table.transform_matrix(rows)
        return self.beta0 + X @ np.asarray(self.betas, dtype=np.float64)

    def predict_proba_many(self, rows) -> np.ndarray:
        return sigmoid(self.log_odds_many(rows))

    def rate(self, vector) -> RiskRating:
        return classify_rating(self.predict_proba(vector), self.thresholds)

    def to_document(self) -> dict:
        return {
            "version": self.version,
            "trained_at": self.trained_at,
            "lambda": self.lam,
            "beta0": self.beta0,
            "betas": list(self.betas),
            "feature_order": list(self.feature_order),
            "training_metrics": dict(self.training_metrics),
            "woe_table": self.woe_table.to_dict(),
            "thresholds": list(self.thresholds),
            "provenance": dict(self.provenance),
        }

    def artifact_bytes(self) -> bytes:
        return (canonical_json(self.to_document()) + "\n").encode("utf-8")

    def artifact_hash(self) -> str:
        return hashlib.sha256(self.artifact_bytes()).hexdigest()

    @classmethod
    def from_document(cls, d: dict) -> "ScorecardModel":
        try:
            return cls(
                beta0=float(d["beta0"]),
                betas=tuple(float(b) for b in d["betas"]),
                lam=float(d["lambda"]),
                woe_table=WoeTable.from_dict(d["woe_table"]),
                feature_order=tuple(d["feature_order"]),
                version=str(d["version"]),
                trained_at=str(d["trained_at"]),
                training_metrics={k: float(v) for k, v in d["training_metrics"].items()},
                thresholds=tuple(float(t) for t in d.get("thresholds", DEFAULT_THRESHOLDS)),
                provenance=dict(d.get("provenance", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError("SCHEMA_INVALID", f"bad model document: {exc}")


def train(
    data: Sequence,
    labels: Sequence[int],
    table: WoeTable,
    lam: float = DEFAULT_LAMBDA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    version: Optional[str] = None,
    trained_at: str = "",
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    provenance: Optional[dict] = None,
) -> ScorecardModel:
    """Fit the scorecard on WOE-encoded ``data`` (mappings or FeatureVectors).

    When ``max_iter`` is exhausted the model is still returned, with
    ``training_metrics["converged"] == 0`` and a :class:`ConvergenceWarning`.
    """
    rows = [row_values(r) for r in data]
    y = np.asarray(labels)
    if y.size == 0 or y.min() == y.max():
        raise ModelError("SINGLE_CLASS", "both classes are required")
    classify_rating(0.0, thresholds)
    X = table.transform_matrix(rows)
    fit = fit_logistic(X, y, lam, tol, max_iter)
    if not fit.converged:
        warnings.warn(f"scorecard did not converge: max|grad|={fit.grad_norm:.3g} after {fit.iterations} "
                      "iterations", ConvergenceWarning, stacklevel=2)
    scores = fit.theta[0] + X @ fit.theta[1:]
    metrics = {
        "objective": fit.objective,
        "iterations": float(fit.iterations),
        "grad_norm": fit.grad_norm,
        "converged": 1.0 if fit.converged else 0.0,
        "train_auroc": auroc(y, scores),
        "n_train": float(len(y)),
    }
    model = ScorecardModel(
        beta0=float(fit.theta[0]),
        betas=tuple(float(b) for b in fit.theta[1:]),
        lam=float(lam),
        woe_table=table,
        feature_order=tuple(table.features),
        version=version or "",
        trained_at=trained_at,
        training_metrics=metrics,
        thresholds=tuple(float(t) for t in thresholds),
        provenance=dict(provenance or {}),
    )
    if not version:
        digest = hashlib.sha256(model.artifact_bytes()).hexdigest()[:12]
        model = ScorecardModel(**{**model.__dict__, "version": f"sc-{digest}"})
    return model


def fit_scorecard(
    data: Sequence,
    labels: Sequence[int],
    features: Optional[Sequence[str]] = None,
    *,
    k_init: int = 10,
    min_bin_count: int = 5,
    epsilon: float = 1e-6,
    clamp: float = 5.0,
    lam: float = DEFAULT_LAMBDA,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    trained_on: str = "train",
    trained_at: str = "",
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    provenance: Optional[dict] = None,
) -> ScorecardModel:
    """Bin, WOE-encode and fit in one call (all canonical features by default)."""
    from .features import CANONICAL_FEATURES, CATEGORICAL_FEATURES
    from .woe import fit_woe_table

    table = fit_woe_table(data, labels, features or CANONICAL_FEATURES, CATEGORICAL_FEATURES, k_init,
                          min_bin_count, epsilon, trained_on, clamp)
    return train(data, labels, table, lam, tol, max_iter, trained_at=trained_at, thresholds=thresholds,
                 provenance=provenance)
