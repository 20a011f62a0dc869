"""Drift monitoring (PSI) and champion-challenger bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from ..errors import ServiceError
from ..metrics import auroc
from ..woe import WoeTable, row_values

DEFAULT_PSI_EPSILON = 1e-6
DEFAULT_PSI_ALERT = 0.2


def psi(expected: Sequence[float], actual: Sequence[float], epsilon: float = DEFAULT_PSI_EPSILON) -> float:
    """Population stability index ``sum (a - e) * ln((a + eps) / (e + eps))`` over bin shares."""
    e = np.asarray(expected, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if e.shape != a.shape:
        raise ServiceError("SHAPE_MISMATCH", "expected and actual need the same bins")
    terms = (a - e) * (np.log(a + epsilon) - np.log(e + epsilon))
    return float(max(terms.sum(), 0.0))


@dataclass(frozen=True)
class DriftReport:
    psi: dict
    overall_alert: bool
    alert_level: float
    n_window: int
    model_version: str = ""

    def to_dict(self) -> dict:
        return {"psi": dict(self.psi), "overall_alert": self.overall_alert, "alert_level": self.alert_level,
                "n_window": self.n_window, "model_version": self.model_version}


def reference_shares(table: WoeTable, feature: str) -> np.ndarray:
    stats = table.bins[feature]
    counts = np.array([s.n_good + s.n_bad for s in stats], dtype=np.float64)
    return counts / counts.sum()


def window_shares(table: WoeTable, feature: str, rows: Sequence[Mapping]) -> np.ndarray:
    counts = np.zeros(len(table.bins[feature]))
    for r in rows:
        counts[table.bin_index(feature, r.get(feature))] += 1
    return counts / counts.sum()


def drift_check(table: WoeTable, window: Sequence, alert_level: float = DEFAULT_PSI_ALERT,
                epsilon: float = DEFAULT_PSI_EPSILON, model_version: str = "") -> DriftReport:
    """PSI of every table feature between its training bin shares and the window."""
    rows = [row_values(r) for r in window]
    if not rows:
        raise ServiceError("EMPTY_WINDOW", "no scored vectors in the drift window")
    out = {f: psi(reference_shares(table, f), window_shares(table, f, rows), epsilon) for f in table.features}
    return DriftReport(out, any(v >= alert_level for v in out.values()), alert_level, len(rows), model_version)


@dataclass(frozen=True)
class PeriodRecord:
    period: str
    champion_auroc: float
    challenger_auroc: float
    challenger_won: bool
    n: int

    def to_dict(self) -> dict:
        return {"period": self.period, "champion_auroc": self.champion_auroc,
                "challenger_auroc": self.challenger_auroc, "challenger_won": self.challenger_won, "n": self.n}


@dataclass(frozen=True)
class ChampionChallengerState:
    champion: str
    challenger: Optional[str]
    promote_after: int = 3
    window: tuple = field(default_factory=tuple)

    @property
    def streak(self) -> int:
        """Consecutive challenger wins at the end of the window."""
        n = 0
        for rec in reversed(self.window):
            if not rec.challenger_won:
                break
            n += 1
        return n

    @property
    def promotion_ready(self) -> bool:
        return self.challenger is not None and self.streak >= self.promote_after

    def record(self, rec: PeriodRecord) -> "ChampionChallengerState":
        return replace(self, window=self.window + (rec,))

    def to_dict(self) -> dict:
        return {"champion": self.champion, "challenger": self.challenger, "promote_after": self.promote_after,
                "window": [r.to_dict() for r in self.window], "streak": self.streak,
                "promotion_ready": self.promotion_ready}


def evaluate_period(state: ChampionChallengerState, period: str, decisions: Sequence[Mapping],
                    outcomes: Mapping[str, int], min_per_class: int = 5):
    """Pair labeled outcomes with logged champion and shadow scores for one period.

    ``decisions`` are decision-log records. A tie on AUROC counts as a
    champion win. Returns ``(new_state, notification)`` where the
    notification is ``"PROMOTION_READY"`` or ``None``.
    """
    if state.challenger is None:
        raise ServiceError("NO_CHALLENGER", "no challenger to evaluate")
    y, champ, chall = [], [], []
    for d in decisions:
        aid = d["decision"]["applicant_id"]
        if aid not in outcomes:
            continue
        if d["decision"]["model_version"] != state.champion:
            continue
        shadow = d.get("shadow")
        if not shadow or shadow.get("version") != state.challenger:
            continue
        y.append(int(outcomes[aid]))
        champ.append(d["decision"]["cashflow_rating"]["pd"])
        chall.append(shadow["pd"])
    n_bad = sum(y)
    if n_bad < min_per_class or len(y) - n_bad < min_per_class:
        raise ServiceError("INSUFFICIENT_OUTCOMES",
                           f"need {min_per_class} outcomes per class, have {n_bad} bad / {len(y) - n_bad} good")
    a_champ, a_chall = auroc(y, champ), auroc(y, chall)
    rec = PeriodRecord(period, a_champ, a_chall, a_chall > a_champ, len(y))
    new = state.record(rec)
    return new, ("PROMOTION_READY" if new.promotion_ready else None)

