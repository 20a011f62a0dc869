"""Core domain records shared by ingestion, feature engineering and scoring."""

from __future__ import annotations

import calendar
import datetime as dt
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import FeatureError, StatementError

CATEGORIES = ("inflow", "outflow", "transfer", "fee", "unknown")
MONTHS_REQUIRED = 6


def parse_month(month: str) -> tuple[int, int]:
    try:
        year_s, mon_s = month.split("-")
        year, mon = int(year_s), int(mon_s)
    except (AttributeError, ValueError):
        raise StatementError("MALFORMED_MONTH", f"expected YYYY-MM, got {month!r}")
    if not 1 <= mon <= 12 or len(year_s) != 4 or len(mon_s) != 2:
        raise StatementError("MALFORMED_MONTH", f"expected YYYY-MM, got {month!r}")
    return year, mon


def month_of(day: dt.date) -> str:
    return f"{day.year:04d}-{day.month:02d}"


def shift_month(month: str, n: int) -> str:
    year, mon = parse_month(month)
    k = year * 12 + (mon - 1) + n
    return f"{k // 12:04d}-{k % 12 + 1:02d}"


def month_days(month: str) -> list[dt.date]:
    year, mon = parse_month(month)
    ndays = calendar.monthrange(year, mon)[1]
    return [dt.date(year, mon, d) for d in range(1, ndays + 1)]


def format_money(minor: int) -> str:
    sign = "-" if minor < 0 else ""
    q, r = divmod(abs(int(minor)), 100)
    return f"{sign}{q}.{r:02d}"


@dataclass(frozen=True)
class Transaction:
    txn_date: dt.date
    description: str
    amount_minor: int
    balance_after_minor: int
    category: str = "unknown"

    def __post_init__(self):
        if self.amount_minor == 0:
            raise StatementError("MALFORMED_ROW", "transaction amount must be non-zero")
        if self.category not in CATEGORIES:
            raise StatementError("MALFORMED_ROW", f"unknown category {self.category!r}")

    @property
    def key(self) -> tuple:
        return (self.txn_date, self.description, self.amount_minor)


@dataclass(frozen=True)
class BankStatement:
    account_id: str
    month: str
    opening_balance_minor: int
    transactions: tuple[Transaction, ...] = ()

    def __post_init__(self):
        parse_month(self.month)
        object.__setattr__(self, "transactions", tuple(self.transactions))

    @property
    def closing_balance_minor(self) -> int:
        if self.transactions:
            return self.transactions[-1].balance_after_minor
        return self.opening_balance_minor

    @property
    def ref(self) -> tuple[str, str]:
        return (self.account_id, self.month)

    def to_dict(self) -> dict:
        return {
            "account_id": self.account_id,
            "month": self.month,
            "opening_balance": format_money(self.opening_balance_minor),
            "transactions": [
                {
                    "date": t.txn_date.isoformat(),
                    "description": t.description,
                    "amount": format_money(t.amount_minor),
                    "balance": format_money(t.balance_after_minor),
                }
                for t in self.transactions
            ],
        }


@dataclass(frozen=True)
class ApplicationForm:
    """Application-form attributes captured at loan submission."""

    years_in_business: float
    location: str
    sector_code: str
    num_directors: int
    director_min_age: int
    customer_classification: str
    monthly_installment_minor: int

    def __post_init__(self):
        if not self.years_in_business >= 0:
            raise FeatureError("INVALID_FORM", "years_in_business must be >= 0")
        if self.num_directors < 1:
            raise FeatureError("INVALID_FORM", "num_directors must be >= 1")
        if self.director_min_age < 18:
            raise FeatureError("INVALID_FORM", "director_min_age must be >= 18")
        if self.monthly_installment_minor <= 0:
            raise FeatureError("INVALID_FORM", "monthly_installment_minor must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ApplicationForm":
        try:
            return cls(
                years_in_business=float(d["years_in_business"]),
                location=str(d["location"]),
                sector_code=str(d["sector_code"]),
                num_directors=int(d["num_directors"]),
                director_min_age=int(d["director_min_age"]),
                customer_classification=str(d["customer_classification"]),
                monthly_installment_minor=int(d["monthly_installment_minor"]),
            )
        except KeyError as exc:
            raise FeatureError("INVALID_FORM", f"missing form field {exc.args[0]!r}")
        except (TypeError, ValueError) as exc:
            raise FeatureError("INVALID_FORM", str(exc))


@dataclass(frozen=True)
class ApplicantRecord:
    applicant_id: str
    account_id: str
    statements: tuple[BankStatement, ...]
    form: ApplicationForm
    label: Optional[int] = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def months(self) -> list[str]:
        return [s.month for s in self.statements]

    def scaled(self, k: int) -> "ApplicantRecord":
        """Copy with every monetary amount multiplied by the integer ``k``."""
        stmts = tuple(
            BankStatement(
                s.account_id,
                s.month,
                s.opening_balance_minor * k,
                tuple(
                    Transaction(t.txn_date, t.description, t.amount_minor * k,
                                t.balance_after_minor * k, t.category)
                    for t in s.transactions
                ),
            )
            for s in self.statements
        )
        form = ApplicationForm(**{**self.form.to_dict(),
                                  "monthly_installment_minor": self.form.monthly_installment_minor * k})
        return ApplicantRecord(self.applicant_id, self.account_id, stmts, form, self.label)

    def to_dict(self) -> dict:
        return {
            "applicant_id": self.applicant_id,
            "account_id": self.account_id,
            "label": self.label,
            "form": self.form.to_dict(),
            "statements": [s.to_dict() for s in self.statements],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ApplicantRecord":
        from .ingest import statement_from_dict

        return cls(
            applicant_id=d["applicant_id"],
            account_id=d["account_id"],
            statements=tuple(statement_from_dict(s) for s in d["statements"]),
            form=ApplicationForm.from_dict(d["form"]),
            label=d.get("label"),
        )
