"""CI retraining: refit on a labeled snapshot, compare with the champion, register."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import ServiceError
from ..experiments import stratified_split
from ..metrics import auroc
from ..scorecard import fit_scorecard
from ..woe import row_values
from .registry import ModelRegistryEntry, Registry, document_hash

TRIGGERS = ("scheduled", "drift_alert")


@dataclass
class RetrainResult:
    trigger: str
    entry: Optional[ModelRegistryEntry]
    candidate_auroc: float
    champion_auroc: Optional[float]
    designated: bool
    duplicate: bool
    reason: str

    def to_dict(self) -> dict:
        return {"trigger": self.trigger, "entry": self.entry.to_dict() if self.entry else None,
                "candidate_auroc": self.candidate_auroc, "champion_auroc": self.champion_auroc,
                "designated": self.designated, "duplicate": self.duplicate, "reason": self.reason}


def ci_retrain(
    trigger: str,
    data: Sequence,
    labels: Sequence,
    registry: Registry,
    *,
    at: str,
    seed: int = 0,
    train_fraction: float = 0.6,
    binning: Optional[dict] = None,
    lam: float = 1.0,
    thresholds=(0.05, 0.15),
    min_per_class: int = 5,
    provenance: Optional[dict] = None,
) -> RetrainResult:
    """Fit a candidate on the snapshot's training split and judge it on the held-out split.

    Rows with a missing label are dropped. The candidate becomes the
    challenger only when its held-out AUROC strictly exceeds the champion's
    and no challenger is designated yet.
    """
    if trigger not in TRIGGERS:
        raise ServiceError("INVALID_TRIGGER", f"trigger must be one of {TRIGGERS}")
    pairs = [(row_values(r), y) for r, y in zip(data, labels) if y is not None]
    y = np.array([int(p[1]) for p in pairs], dtype=np.int64)
    rows = [p[0] for p in pairs]
    n_bad = int(y.sum())
    if n_bad == 0 or n_bad == len(y):
        raise ServiceError("SINGLE_CLASS", "snapshot needs labeled outcomes of both classes")
    if n_bad < min_per_class or len(y) - n_bad < min_per_class:
        raise ServiceError("INSUFFICIENT_OUTCOMES",
                           f"need {min_per_class} outcomes per class, have {n_bad} bad / {len(y) - n_bad} good")
    tr, va = stratified_split(y, train_fraction, seed)
    b = dict(binning or {})
    model = fit_scorecard([rows[i] for i in tr], y[tr], k_init=b.get("k_init", 10),
                          min_bin_count=b.get("min_bin_count", 5), epsilon=b.get("epsilon", 1e-6),
                          clamp=b.get("clamp", 5.0), lam=lam, trained_on="train", trained_at=at,
                          thresholds=thresholds, provenance=dict(provenance or {}, trigger=trigger))
    holdout = [rows[i] for i in va]
    cand_auc = auroc(y[va], model.log_odds_many(holdout))
    champ_auc = None
    if registry.champion is not None:
        champ = registry.load_model(registry.champion.version)
        champ_auc = auroc(y[va], champ.log_odds_many(holdout))

    doc = model.to_document()
    existing = registry.find_hash(document_hash(doc))
    if existing is not None:
        return RetrainResult(trigger, existing, cand_auc, champ_auc, False, True, "artifact already registered")
    metrics = dict(model.training_metrics, holdout_auroc=cand_auc)
    if champ_auc is not None:
        metrics["champion_holdout_auroc"] = champ_auc
    entry = registry.register(doc, at, metrics)
    if champ_auc is None:
        return RetrainResult(trigger, entry, cand_auc, None, False, False, "no champion to compare against")
    if not cand_auc > champ_auc:
        return RetrainResult(trigger, entry, cand_auc, champ_auc, False, False, "not better than champion")
    if registry.challenger is not None:
        return RetrainResult(trigger, entry, cand_auc, champ_auc, False, False, "a challenger is already designated")
    entry = registry.designate_challenger(entry.version, at)
    return RetrainResult(trigger, entry, cand_auc, champ_auc, True, False, "designated challenger")
