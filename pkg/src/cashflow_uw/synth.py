"""Deterministic synthetic MSME portfolios.

Each applicant gets an application form and six months of daily-granularity
bank statements with exact running balances. Default labels are drawn from
``sigmoid(true_log_odds)`` where the true log-odds are a weighted sum of the
applicant's *computed* canonical features (rank-normalized across the
portfolio), so signal strength is set directly by ``signal_weights``.

Randomness
----------
A single PCG64 stream seeded with ``config.seed``; only its uniform doubles
(``Generator.random``) are consumed, and normals are derived from them by
Box-Muller (cosine branch), so the output depends only on the PCG64
algorithm. Draw order:

1. per applicant, in index order: 3 uniforms (location, sector,
   classification), 1 uniform (directors), 11 normals (years, age,
   installment, level, growth, instability, volatility, dip, regularity,
   credit size, channel), 6 monthly normals, 6 monthly uniforms (dry
   month), then per calendar day one
   uniform (credit occurs), one normal (credit size), one normal (daily
   target noise), then 1 uniform for the dip start day;
2. n normals of unexplained noise;
3. n uniforms for the Bernoulli labels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Optional

import numpy as np

from .errors import ConfigError
from .features import (
    APP_FEATURES,
    BANK_FEATURES,
    CANONICAL_FEATURES,
    build_feature_vector,
    is_categorical,
)
from .ingest import DEFAULT_CATEGORY_RULES, categorize, parse_statement, serialize_statement
from .records import (
    MONTHS_REQUIRED,
    ApplicantRecord,
    ApplicationForm,
    BankStatement,
    Transaction,
    month_days,
    shift_month,
)

DEFAULT_SIGNAL_WEIGHTS = {
    "bal_log_growth": -0.75,
    "avg_balance_6m": -0.45,
    "min_balance_ratio_3m": -0.6,
    "min_vs_max_avg_pct_diff_3m": -0.3,
    "max_avg_balance_3m": 0.0,
    "cashflow_stability_cv": 0.15,
    "deposit_regularity": -0.6,
    "balance_volatility": 0.0,
    "mean_monthly_credits": -0.3,
    "mean_monthly_debits": 0.0,
    "years_in_business": -0.585,
    "location": 0.325,
    "sector_code": 0.39,
    "num_directors": -0.13,
    "director_min_age": -0.26,
    "customer_classification": 0.585,
    "repayment_capacity": -0.39,
}

LOCATIONS = ("L01", "L02", "L03", "L04", "L05", "L06", "L07", "L08")
LOCATION_P = (0.25, 0.2, 0.15, 0.12, 0.1, 0.08, 0.06, 0.04)
LOCATION_EFFECT = (0.0, 0.3, -0.2, 0.5, -0.4, 0.2, 0.6, -0.5)
SECTORS = tuple(f"S{i:02d}" for i in range(1, 13))
SECTOR_P = (0.2, 0.16, 0.13, 0.11, 0.09, 0.08, 0.06, 0.05, 0.04, 0.04, 0.02, 0.02)
SECTOR_EFFECT = (0.0, -0.3, 0.4, 0.2, -0.5, 0.6, 0.1, -0.2, 0.8, 0.3, 1.0, -0.6)
CLASSES = ("C1", "C2", "C3", "C4")
CLASS_P = (0.4, 0.3, 0.2, 0.1)
CLASS_EFFECT = (-0.6, 0.0, 0.4, 0.9)
CATEGORY_EFFECTS = {
    "location": dict(zip(LOCATIONS, LOCATION_EFFECT)),
    "sector_code": dict(zip(SECTORS, SECTOR_EFFECT)),
    "customer_classification": dict(zip(CLASSES, CLASS_EFFECT)),
}

FEE_MINOR = 1500
MIN_TARGET_MINOR = 10_000


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_applicants: int = 611
    event_rate_target: float = 0.152
    signal_weights: dict = field(default_factory=lambda: dict(DEFAULT_SIGNAL_WEIGHTS))
    noise_scale: float = 0.3
    months: int = MONTHS_REQUIRED
    start_month: str = "2024-01"

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("INVALID_CONFIG", "seed must be a non-negative integer")
        if self.n_applicants < 1:
            raise ConfigError("INVALID_CONFIG", "n_applicants must be >= 1")
        if not 0 < self.event_rate_target < 1:
            raise ConfigError("INVALID_CONFIG", "event_rate_target must be in (0, 1)")
        if self.noise_scale < 0:
            raise ConfigError("INVALID_CONFIG", "noise_scale must be >= 0")
        if self.months != MONTHS_REQUIRED:
            raise ConfigError("INVALID_CONFIG", f"months must be {MONTHS_REQUIRED}")
        unknown = set(self.signal_weights) - set(CANONICAL_FEATURES)
        if unknown:
            raise ConfigError("INVALID_CONFIG", f"unknown signal_weights features {sorted(unknown)}")
        try:
            shift_month(self.start_month, 0)
        except Exception:
            raise ConfigError("INVALID_CONFIG", f"bad start_month {self.start_month!r}")

    @classmethod
    def from_mapping(cls, d: dict) -> "GeneratorConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError("INVALID_CONFIG", f"unknown generator fields {sorted(unknown)}")
        d = dict(d)
        if "signal_weights" in d:
            d["signal_weights"] = {**DEFAULT_SIGNAL_WEIGHTS, **d["signal_weights"]}
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GroundTruth:
    applicant_id: str
    true_log_odds: float
    label: int


@dataclass
class Portfolio:
    records: list
    truths: list
    config: GeneratorConfig

    @property
    def labels(self) -> list[int]:
        return [t.label for t in self.truths]


class SeededStream:
    """Uniform doubles from PCG64 plus Box-Muller normals."""

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, n: Optional[int] = None):
        return self._gen.random(n)

    def normal(self, n: Optional[int] = None):
        m = 1 if n is None else n
        u1 = self._gen.random(m)
        u2 = self._gen.random(m)
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return float(z[0]) if n is None else z

    @staticmethod
    def pick(u: float, options, probs):
        acc = 0.0
        for opt, p in zip(options, probs):
            acc += p
            if u < acc:
                return opt
        return options[-1]


def _simulate_applicant(i: int, cfg: GeneratorConfig, rs: SeededStream):
    u_loc, u_sec, u_cls, u_dir = rs.uniform(4)
    (z_years, z_age, z_inst, z_level, z_growth, z_instab, z_vol, z_dip, z_reg,
     z_size, z_chan) = rs.normal(11)
    month_eta = rs.normal(6)
    u_dry = rs.uniform(6)

    months = [shift_month(cfg.start_month, m) for m in range(cfg.months)]
    days = [d for m in months for d in month_days(m)]
    nd = len(days)
    u_credit = rs.uniform(nd)
    z_credit = rs.normal(nd)
    z_daily = rs.normal(nd)
    u_dipstart = rs.uniform()

    level = 5_000_000.0 * math.exp(0.8 * z_level)
    growth = 0.15 * z_growth
    instab = 0.08 * math.exp(0.5 * z_instab)
    vol = 0.05 * math.exp(0.5 * z_vol)
    dip = min(max(0.25 + 0.2 * z_dip, 0.0), 0.9)
    p_credit = min(max(0.35 * math.exp(0.6 * z_reg), 0.01), 0.95)
    # months without any credit; irregular depositors have more of them
    q_dry = min(0.12 * math.exp(-0.8 * z_reg), 0.6)
    dry = u_dry < q_dry
    credit_base = level * 0.02 * math.exp(0.3 * z_size)

    form = ApplicationForm(
        years_in_business=round(min(math.exp(1.5 + 0.8 * z_years), 60.0), 1),
        location=SeededStream.pick(u_loc, LOCATIONS, LOCATION_P),
        sector_code=SeededStream.pick(u_sec, SECTORS, SECTOR_P),
        num_directors=min(1 + int(-math.log1p(-u_dir) * 0.8), 6),
        director_min_age=int(min(max(round(42 + 9 * z_age), 21), 75)),
        customer_classification=SeededStream.pick(u_cls, CLASSES, CLASS_P),
        monthly_installment_minor=max(100, int(round(level * 0.06 * math.exp(0.4 * z_inst)))),
    )

    month_of_day = np.repeat(np.arange(cfg.months), [len(month_days(m)) for m in months])
    avg_target = level * np.exp(growth * np.arange(cfg.months) / (cfg.months - 1)) * (1 + instab * month_eta)
    avg_target = np.maximum(avg_target, 0.1 * level)
    target = avg_target[month_of_day] * (1 + vol * z_daily)
    target = np.maximum(target, 0.05 * avg_target[month_of_day])
    recent = np.flatnonzero(month_of_day >= 3)
    start = recent[0] + int(u_dipstart * (len(recent) - 5))
    target[start:start + 5] *= 1 - dip
    target = np.maximum(np.round(target), MIN_TARGET_MINOR).astype(np.int64)

    # (day index, amount, kind) with kind in credit/debit/fee
    flows = []
    bal = int(target[0])
    opening = bal
    last_day_of_month = {int(np.flatnonzero(month_of_day == m)[-1]) for m in range(cfg.months)}
    for d in range(nd):
        t = int(target[d])
        if u_credit[d] < p_credit and not dry[month_of_day[d]]:
            c = int(round(credit_base * math.exp(0.3 * z_credit[d]))) + max(0, t - bal)
            c = max(c, 1)
            flows.append([d, c, "credit"])
            bal += c
        if bal > t:
            flows.append([d, t - bal, "debit"])
            bal = t
        if d in last_day_of_month and bal >= FEE_MINOR:
            flows.append([d, -FEE_MINOR, "fee"])
            bal -= FEE_MINOR

    # break equal-and-opposite pairs within 2 days (round-trip rule) by nudging debits
    changed = True
    while changed:
        changed = False
        credits = {}
        for d, a, k in flows:
            if a > 0:
                credits.setdefault(a, []).append(d)
        for fl in flows:
            d, a, k = fl
            if a < 0 and any(abs(d - cd) <= 2 for cd in credits.get(-a, ())):
                fl[1] = a - 1
                changed = True

    chan = "DUITNOW TRANSFER IN" if z_chan > 1.0 else "SALES DEPOSIT"
    txns_by_month = [[] for _ in range(cfg.months)]
    openings = []
    running = opening
    ref = 0
    fi = 0
    for m in range(cfg.months):
        openings.append(running)
        while fi < len(flows) and month_of_day[flows[fi][0]] == m:
            d, a, k = flows[fi]
            ref += 1
            if k == "credit":
                desc = f"{chan} REF{i:05d}{ref:05d}"
            elif k == "debit":
                desc = f"SUPPLIER PAYMENT REF{i:05d}{ref:05d}"
            else:
                desc = "MONTHLY SERVICE CHARGE"
            running += a
            txns_by_month[m].append(Transaction(days[d], desc, a, running, categorize(desc, DEFAULT_CATEGORY_RULES)))
            fi += 1
    account = f"ACC{i:05d}"
    statements = tuple(BankStatement(account, months[m], openings[m], tuple(txns_by_month[m]))
                       for m in range(cfg.months))
    return ApplicantRecord(f"APP{i:05d}", account, statements, form)


def _rank_normal(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    ranks[order] = np.arange(1, len(x) + 1)
    # average ranks over ties
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    sums = np.bincount(inv, weights=ranks)
    ranks = sums[inv] / counts[inv]
    nd = NormalDist()
    return np.array([nd.inv_cdf((r - 0.5) / len(x)) for r in ranks])


def _standardize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def signal_scores(vectors, weights: dict) -> np.ndarray:
    """Weighted sum of standardized features (rank-normal scores for numerics)."""
    n = len(vectors)
    s = np.zeros(n)
    for f, w in weights.items():
        if w == 0 or n < 2:
            continue
        col = [v.values[f] for v in vectors]
        if is_categorical(f):
            z = _standardize([CATEGORY_EFFECTS[f].get(c, 0.0) for c in col])
        else:
            z = _rank_normal(col)
        s += w * z
    return s


def _calibrate_intercept(s: np.ndarray, target: float) -> float:
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.mean(1.0 / (1.0 + np.exp(-(mid + s)))) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_portfolio(config: GeneratorConfig) -> Portfolio:
    config.validate()
    rs = SeededStream(config.seed)
    records = [_simulate_applicant(i, config, rs) for i in range(config.n_applicants)]
    noise = rs.normal(config.n_applicants)
    u_label = rs.uniform(config.n_applicants)

    vectors = [build_feature_vector(r, computed_at="generator") for r in records]
    s = signal_scores(vectors, config.signal_weights) + config.noise_scale * noise
    b0 = _calibrate_intercept(s, config.event_rate_target)
    lo = b0 + s
    p = 1.0 / (1.0 + np.exp(-lo))
    labels = (u_label < p).astype(int)

    out, truths = [], []
    for r, z, y in zip(records, lo, labels):
        out.append(ApplicantRecord(r.applicant_id, r.account_id, r.statements, r.form, int(y)))
        truths.append(GroundTruth(r.applicant_id, float(z), int(y)))
    return Portfolio(out, truths, config)


FORM_COLUMNS = ("applicant_id", "account_id", "years_in_business", "location", "sector_code",
                "num_directors", "director_min_age", "customer_classification", "monthly_installment_minor")


def export_dataset(portfolio: Portfolio, directory: str | Path) -> Path:
    """Write ``statements/<applicant>/<month>.csv``, ``forms.csv``, ``labels.csv``, ``ground_truth.csv``."""
    root = Path(directory)
    (root / "statements").mkdir(parents=True, exist_ok=True)
    for r in portfolio.records:
        d = root / "statements" / r.applicant_id
        d.mkdir(parents=True, exist_ok=True)
        for s in r.statements:
            (d / f"{s.month}.csv").write_bytes(serialize_statement(s, "csv"))
    with open(root / "forms.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORM_COLUMNS)
        for r in portfolio.records:
            f = r.form
            w.writerow([r.applicant_id, r.account_id, repr(f.years_in_business), f.location, f.sector_code,
                        f.num_directors, f.director_min_age, f.customer_classification,
                        f.monthly_installment_minor])
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("applicant_id", "label"))
        for r in portfolio.records:
            w.writerow((r.applicant_id, r.label))
    with open(root / "ground_truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("applicant_id", "true_log_odds", "label"))
        for t in portfolio.truths:
            w.writerow((t.applicant_id, repr(t.true_log_odds), t.label))
    (root / "manifest.json").write_text(
        json.dumps({"generator": portfolio.config.to_dict(), "n_applicants": len(portfolio.records)},
                   sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return root


@dataclass
class RawApplicant:
    applicant_id: str
    account_id: str
    statement_files: list  # [(month, bytes)]
    form: ApplicationForm
    label: Optional[int]


def load_raw_dataset(directory: str | Path) -> list[RawApplicant]:
    root = Path(directory)
    labels = {}
    if (root / "labels.csv").exists():
        with open(root / "labels.csv", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                labels[row["applicant_id"]] = int(row["label"]) if row["label"] != "" else None
    out = []
    with open(root / "forms.csv", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            aid = row["applicant_id"]
            form = ApplicationForm.from_dict(row)
            d = root / "statements" / aid
            files = sorted(d.glob("*.csv")) if d.exists() else []
            out.append(RawApplicant(aid, row["account_id"], [(p.stem, p.read_bytes()) for p in files],
                                    form, labels.get(aid)))
    return out


def parse_raw(raw: RawApplicant) -> list[BankStatement]:
    return [parse_statement(data, "csv", account_id=raw.account_id, month=month) for month, data in
            raw.statement_files]


def bayes_auroc(portfolio: Portfolio) -> float:
    from .metrics import auroc

    return auroc(portfolio.labels, [t.true_log_odds for t in portfolio.truths])


__all__ = [
    "APP_FEATURES", "BANK_FEATURES", "GeneratorConfig", "GroundTruth", "Portfolio", "SeededStream",
    "generate_portfolio", "export_dataset", "load_raw_dataset", "parse_raw", "bayes_auroc",
]
