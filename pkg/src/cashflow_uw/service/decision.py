"""Scoring requests, the risk override rule and the decision log."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from ..errors import ServiceError
from ..features import build_feature_vector
from ..ingest import assemble_applicant, deduplicate, parse_statement, validate_statement
from ..jsonl import JsonlLog, read_jsonl
from ..records import ApplicationForm, parse_month
from ..scorecard import RiskRating, RiskTier, ScorecardModel, classify_rating
from .registry import Registry


def override(bureau: Optional[RiskRating], cashflow: RiskRating) -> RiskRating:
    """Conservative fusion: the higher-risk rating wins (Low < Medium < High)."""
    if bureau is None:
        return cashflow
    return bureau if bureau.tier.severity > cashflow.tier.severity else cashflow


@dataclass(frozen=True)
class Decision:
    applicant_id: str
    bureau_rating: Optional[RiskRating]
    cashflow_rating: RiskRating
    final: RiskRating
    model_version: str
    decided_at: str
    flags: tuple = ()

    def __post_init__(self):
        if self.final != override(self.bureau_rating, self.cashflow_rating):
            raise ServiceError("INCONSISTENT", "final rating must follow the override rule")

    def to_dict(self) -> dict:
        return {
            "applicant_id": self.applicant_id,
            "bureau_rating": self.bureau_rating.to_dict() if self.bureau_rating else None,
            "cashflow_rating": self.cashflow_rating.to_dict(),
            "final": self.final.to_dict(),
            "model_version": self.model_version,
            "decided_at": self.decided_at,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Decision":
        b = d.get("bureau_rating")
        return cls(d["applicant_id"], RiskRating.from_dict(b) if b else None,
                   RiskRating.from_dict(d["cashflow_rating"]), RiskRating.from_dict(d["final"]),
                   d["model_version"], d["decided_at"], tuple(d.get("flags", ())))


def bureau_from_payload(value) -> Optional[RiskRating]:
    """Accept a tier name (``"Low"``) or a ``{"tier", "pd"}`` mapping from the bureau scorecard."""
    if value is None or value == "":
        return None
    try:
        if isinstance(value, str):
            return RiskRating(RiskTier(value))
        pd = value.get("pd")
        return RiskRating(RiskTier(value["tier"]), None if pd is None else float(pd))
    except (ValueError, KeyError, TypeError):
        raise ServiceError("INVALID_BUREAU_RATING", f"bad bureau rating {value!r}")


@dataclass
class StatementFile:
    name: str
    data: bytes

    @property
    def fmt(self) -> str:
        return "json" if self.name.lower().endswith(".json") else "csv"

    @property
    def month(self) -> Optional[str]:
        stem = Path(self.name).stem
        try:
            parse_month(stem)
            return stem
        except Exception:
            return None


@dataclass
class ScoreRequest:
    form: dict
    statements: Sequence[StatementFile]
    applicant_id: Optional[str] = None
    account_id: str = "unknown"
    bureau_rating: object = None


@dataclass
class _Snapshot:
    champion: Optional[ScorecardModel]
    challenger: Optional[ScorecardModel]


class DecisionEngine:
    """Scores applicants against an immutable (champion, challenger) snapshot.

    A promotion replaces the snapshot reference in one assignment, so a
    request in flight completes on the models it started with.
    """

    def __init__(self, registry: Registry, log_path: str | Path, thresholds=(0.05, 0.15), clock=None):
        self.registry = registry
        self.log = JsonlLog(log_path)
        self.thresholds = tuple(thresholds)
        self.clock = clock
        self._refresh_lock = threading.Lock()
        self.refresh()

    def refresh(self) -> None:
        with self._refresh_lock:
            reg = self.registry
            champ = reg.load_model(reg.champion.version) if reg.champion else None
            chall = reg.load_model(reg.challenger.version) if reg.challenger else None
            self._snapshot = _Snapshot(champ, chall)

    @property
    def champion(self) -> Optional[ScorecardModel]:
        return self._snapshot.champion

    def _now(self) -> str:
        from ..config import reference_now

        return self.clock() if self.clock else reference_now()

    def build_record(self, req: ScoreRequest):
        form = ApplicationForm.from_dict(req.form)
        statements = [parse_statement(f.data, f.fmt, account_id=req.account_id, month=f.month)
                      for f in req.statements]
        statements = deduplicate(statements)
        rec = assemble_applicant(statements, form, applicant_id=req.applicant_id)
        flags = []
        prev = None
        for s in rec.statements:
            flags.extend(f"{s.month}:{f}" for f in validate_statement(s, prev).flags)
            prev = s
        return rec, tuple(flags)

    def score(self, req: ScoreRequest, *, shadow: bool = True) -> Decision:
        snap = self._snapshot
        if snap.champion is None:
            raise ServiceError("NO_CHAMPION", "no champion model registered")
        bureau = bureau_from_payload(req.bureau_rating)
        rec, flags = self.build_record(req)
        now = self._now()
        vector = build_feature_vector(rec, computed_at=now)
        pd = snap.champion.predict_proba(vector)
        cash = classify_rating(pd, self.thresholds)
        decision = Decision(rec.applicant_id, bureau, cash, override(bureau, cash), snap.champion.version, now,
                            flags)
        entry = {"decision": decision.to_dict(), "features": dict(vector.values), "shadow": None}
        if shadow and snap.challenger is not None:
            spd = snap.challenger.predict_proba(vector)
            entry["shadow"] = {"version": snap.challenger.version, "pd": spd,
                               "tier": classify_rating(spd, self.thresholds).tier.value}
        self.log.append(entry)
        return decision

    def records(self) -> list[dict]:
        return read_jsonl(self.log.path)

    def window(self, n: int, model_version: Optional[str] = None) -> list[dict]:
        rows = [r["features"] for r in self.records()
                if model_version is None or r["decision"]["model_version"] == model_version]
        return rows[-n:] if n else rows

