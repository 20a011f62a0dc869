"""Feature engineering and the versioned feature store.

Ten bank-statement features are derived from the end-of-day balance series
(days without transactions carry the prior balance forward) and from the
monthly credit/debit totals. Seven application features are the six form
pass-throughs plus repayment capacity. All monetary features are in minor
currency units.
"""

from __future__ import annotations

import datetime as dt
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import FeatureError
from .jsonl import JsonlLog, read_jsonl
from .records import ApplicantRecord, month_days

FEATURE_SET_VERSION = "1.0.0"

BANK_FEATURES = (
    "bal_log_growth",
    "avg_balance_6m",
    "min_balance_ratio_3m",
    "min_vs_max_avg_pct_diff_3m",
    "max_avg_balance_3m",
    "cashflow_stability_cv",
    "deposit_regularity",
    "balance_volatility",
    "mean_monthly_credits",
    "mean_monthly_debits",
)
APP_FEATURES = (
    "years_in_business",
    "location",
    "sector_code",
    "num_directors",
    "director_min_age",
    "customer_classification",
    "repayment_capacity",
)
CANONICAL_FEATURES = APP_FEATURES + BANK_FEATURES
CATEGORICAL_FEATURES = frozenset({"location", "sector_code", "customer_classification"})

SOURCE_TAGS = {**{f: "application" for f in APP_FEATURES}, **{f: "bank_statement" for f in BANK_FEATURES}}
GROUP_TAGS = {
    **{f: "account_behaviour" for f in BANK_FEATURES},
    "repayment_capacity": "repayment_capacity",
    **{f: "business_demographics" for f in APP_FEATURES if f != "repayment_capacity"},
}


def is_categorical(feature: str) -> bool:
    return feature in CATEGORICAL_FEATURES


def _floor(den: float) -> float:
    # denominators under one minor unit are replaced by one minor unit
    return den if abs(den) >= 1.0 else 1.0


def eod_balances(statement) -> np.ndarray:
    """End-of-day balance for every calendar day of the statement month."""
    days = month_days(statement.month)
    first = days[0]
    eod = [None] * len(days)
    for t in statement.transactions:
        i = (t.txn_date - first).days
        if 0 <= i < len(days):
            eod[i] = t.balance_after_minor
    out = np.empty(len(days), dtype=np.float64)
    bal = statement.opening_balance_minor
    for i, v in enumerate(eod):
        if v is not None:
            bal = v
        out[i] = bal
    return out


def monthly_flows(statement) -> tuple[int, int]:
    credits = sum(t.amount_minor for t in statement.transactions if t.amount_minor > 0)
    debits = sum(-t.amount_minor for t in statement.transactions if t.amount_minor < 0)
    return credits, debits


def mean_net_inflow(rec: ApplicantRecord) -> float:
    return float(np.mean([sum(t.amount_minor for t in s.transactions) for s in rec.statements]))


def compute_bank_features(rec: ApplicantRecord) -> dict[str, float]:
    if len(rec.statements) != 6:
        raise FeatureError("WRONG_MONTH_COUNT", f"need 6 months, got {len(rec.statements)}")
    series = [eod_balances(s) for s in rec.statements]
    avg = np.array([s.mean() for s in series])
    flows = [monthly_flows(s) for s in rec.statements]
    credits = np.array([c for c, _ in flows], dtype=np.float64)
    debits = np.array([d for _, d in flows], dtype=np.float64)
    net = credits - debits

    mean_bal = float(avg.mean())
    min_recent = float(min(s.min() for s in series[3:]))
    max_avg_recent = float(avg[3:].max())
    net_mean = float(net.mean())
    cv = float(net.std()) / abs(net_mean) if abs(net_mean) >= 1.0 else 0.0

    return {
        "bal_log_growth": math.log(max(avg[-1], 1.0) / max(avg[0], 1.0)),
        "avg_balance_6m": mean_bal,
        "min_balance_ratio_3m": min_recent / _floor(mean_bal),
        "min_vs_max_avg_pct_diff_3m": 100.0 * (min_recent - max_avg_recent) / _floor(max_avg_recent),
        "max_avg_balance_3m": max_avg_recent,
        "cashflow_stability_cv": cv,
        "deposit_regularity": float(np.count_nonzero(credits > 0)) / 6.0,
        "balance_volatility": float(np.concatenate(series).std()),
        "mean_monthly_credits": float(credits.mean()),
        "mean_monthly_debits": float(debits.mean()),
    }


def compute_app_features(form, statements_context: ApplicantRecord) -> dict:
    return {
        "years_in_business": float(form.years_in_business),
        "location": form.location,
        "sector_code": form.sector_code,
        "num_directors": float(form.num_directors),
        "director_min_age": float(form.director_min_age),
        "customer_classification": form.customer_classification,
        "repayment_capacity": mean_net_inflow(statements_context) / form.monthly_installment_minor,
    }


@dataclass(frozen=True)
class FeatureVector:
    applicant_id: str
    values: dict
    group_tags: dict = field(default_factory=lambda: dict(GROUP_TAGS))
    source_tags: dict = field(default_factory=lambda: dict(SOURCE_TAGS))
    computed_at: str = ""
    feature_set_version: str = FEATURE_SET_VERSION

    def __post_init__(self):
        sources = [self.source_tags.get(f) for f in self.values]
        if sources.count("application") != 7 or sources.count("bank_statement") != 10:
            raise FeatureError("BAD_FEATURE_SET", "expected 7 application and 10 bank_statement features")
        if set(self.group_tags) != set(self.values):
            raise FeatureError("BAD_FEATURE_SET", "every feature needs exactly one group tag")

    def select(self, features: Iterable[str]) -> dict:
        return {f: self.values[f] for f in features}

    def to_dict(self) -> dict:
        return {
            "applicant_id": self.applicant_id,
            "values": dict(self.values),
            "group_tags": dict(self.group_tags),
            "source_tags": dict(self.source_tags),
            "computed_at": self.computed_at,
            "feature_set_version": self.feature_set_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureVector":
        return cls(d["applicant_id"], dict(d["values"]), dict(d["group_tags"]), dict(d["source_tags"]),
                   d["computed_at"], d["feature_set_version"])


def utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def build_feature_vector(rec: ApplicantRecord, computed_at: Optional[str] = None) -> FeatureVector:
    values = {**compute_app_features(rec.form, rec), **compute_bank_features(rec)}
    values = {f: values[f] for f in CANONICAL_FEATURES}
    for f, v in values.items():
        if not is_categorical(f) and not math.isfinite(v):
            raise FeatureError("NON_FINITE_FEATURE", f"{f} is not finite for {rec.applicant_id}")
    return FeatureVector(rec.applicant_id, values, computed_at=computed_at or utc_now())


@dataclass(frozen=True)
class FeatureStoreEntry:
    applicant_id: str
    feature_set_version: str
    vector: FeatureVector
    label: Optional[int] = None
    written_at: str = ""

    @property
    def key(self) -> tuple[str, str]:
        return (self.applicant_id, self.feature_set_version)

    def to_dict(self) -> dict:
        return {
            "key": {"applicant_id": self.applicant_id, "feature_set_version": self.feature_set_version},
            "vector": self.vector.to_dict(),
            "label": self.label,
            "written_at": self.written_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStoreEntry":
        return cls(d["key"]["applicant_id"], d["key"]["feature_set_version"],
                   FeatureVector.from_dict(d["vector"]), d.get("label"), d["written_at"])


class FeatureStore:
    """Append-only, file-backed feature store with an in-memory index.

    One writer, many readers: ``put`` is serialized by a lock and each entry
    lands in the log with a single atomic append.
    """

    def __init__(self, path: str | Path):
        self._log = JsonlLog(path)
        self._index: dict[tuple[str, str], FeatureStoreEntry] = {}
        self._lock = threading.Lock()
        self.reload()

    @property
    def path(self) -> Path:
        return self._log.path

    def reload(self) -> None:
        index = {}
        for d in read_jsonl(self.path):
            e = FeatureStoreEntry.from_dict(d)
            index[e.key] = e
        self._index = index

    def put(self, entry: FeatureStoreEntry) -> tuple[str, str]:
        if entry.vector.feature_set_version != entry.feature_set_version:
            raise FeatureError("VERSION_MISMATCH", "entry and vector feature_set_version differ")
        with self._lock:
            if entry.key in self._index:
                raise FeatureError("DUPLICATE_KEY", f"{entry.key} already stored")
            if not entry.written_at:
                entry = FeatureStoreEntry(entry.applicant_id, entry.feature_set_version, entry.vector,
                                          entry.label, utc_now())
            self._log.append(entry.to_dict())
            self._index = {**self._index, entry.key: entry}
        return entry.key

    def get(self, applicant_id: str, feature_set_version: str = FEATURE_SET_VERSION) -> FeatureStoreEntry:
        try:
            return self._index[(applicant_id, feature_set_version)]
        except KeyError:
            raise FeatureError("NOT_FOUND", f"no entry for {(applicant_id, feature_set_version)}")

    def entries(self, feature_set_version: str = FEATURE_SET_VERSION) -> list[FeatureStoreEntry]:
        return [e for k, e in self._index.items() if k[1] == feature_set_version]

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._index
