"""Statement ingestion: parsing, integrity checks, de-duplication, assembly.

Money is handled as signed integers in minor currency units (credits
positive, debits negative). Decimal strings are scaled by 100 without ever
passing through a float.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Optional, Sequence

import datetime as dt

from .errors import StatementError
from .records import (
    MONTHS_REQUIRED,
    ApplicantRecord,
    ApplicationForm,
    BankStatement,
    Transaction,
    format_money,
    month_of,
    parse_month,
    shift_month,
)

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("date", "description", "amount", "balance")
RULE_CODES = ("BALANCE_MISMATCH", "DUPLICATE_TXN", "GAP_MONTH", "NEGATIVE_OPENING", "ROUND_TRIP_PAIR")
ROUND_TRIP_DAYS = 2

# keyword -> category; first match wins, matched case-insensitively as a substring
DEFAULT_CATEGORY_RULES: tuple[tuple[str, str], ...] = (
    ("FEE", "fee"),
    ("CHARGE", "fee"),
    ("TRANSFER", "transfer"),
    ("TRF", "transfer"),
    ("IBG", "transfer"),
    ("DUITNOW", "transfer"),
    ("DEPOSIT", "inflow"),
    ("SALES", "inflow"),
    ("RECEIVED", "inflow"),
    ("REFUND", "inflow"),
    ("PAYMENT", "outflow"),
    ("PURCHASE", "outflow"),
    ("SUPPLIER", "outflow"),
    ("SALARY", "outflow"),
    ("RENT", "outflow"),
    ("UTILITY", "outflow"),
    ("WITHDRAWAL", "outflow"),
)

_MONEY_RE = re.compile(r"^[+-]?\d+(?:\.(\d+))?$")


def load_category_rules(path: str | Path) -> tuple[tuple[str, str], ...]:
    """Load a keyword table: a JSON list of ``[keyword, category]`` pairs."""
    with open(path, encoding="utf-8") as fh:
        rules = json.load(fh)
    out = []
    for kw, cat in rules:
        Transaction(dt.date(2000, 1, 1), "", 1, 1, cat)  # validates the category
        out.append((str(kw).upper(), cat))
    return tuple(out)


def categorize(description: str, rules: Sequence[tuple[str, str]] = DEFAULT_CATEGORY_RULES) -> str:
    text = description.upper()
    for kw, cat in rules:
        if kw in text:
            return cat
    return "unknown"


def parse_money(text, row: Optional[int] = None) -> int:
    s = str(text).strip()
    m = _MONEY_RE.match(s)
    if m is None:
        raise StatementError("MALFORMED_ROW", f"bad amount {text!r}", row=row)
    if m.group(1) is not None and len(m.group(1)) > 2:
        raise StatementError("CURRENCY_SCALE_ERROR", f"more than 2 decimal places in {text!r}", row=row)
    try:
        return int(Decimal(s).scaleb(2))
    except InvalidOperation:
        raise StatementError("MALFORMED_ROW", f"bad amount {text!r}", row=row)


def _parse_date(text, row) -> dt.date:
    try:
        return dt.date.fromisoformat(str(text).strip())
    except ValueError:
        raise StatementError("MALFORMED_ROW", f"bad date {text!r}", row=row)


def _build_statement(rows, account_id, month, opening, rules) -> BankStatement:
    txns = []
    for rownum, rec in rows:
        try:
            txns.append(
                Transaction(
                    txn_date=_parse_date(rec["date"], rownum),
                    description=str(rec["description"]),
                    amount_minor=parse_money(rec["amount"], rownum),
                    balance_after_minor=parse_money(rec["balance"], rownum),
                    category=categorize(str(rec["description"]), rules),
                )
            )
        except StatementError as exc:
            if exc.details.get("row") is None:
                exc.details["row"] = rownum
            raise
    # stable: same-day rows keep file order
    txns.sort(key=lambda t: t.txn_date)
    if month is None:
        if not txns:
            raise StatementError("MISSING_COLUMN", "month is required for an empty statement")
        month = month_of(txns[0].txn_date)
    if opening is None:
        opening = txns[0].balance_after_minor - txns[0].amount_minor if txns else 0
    return BankStatement(account_id=account_id, month=month, opening_balance_minor=opening,
                         transactions=tuple(txns))


def parse_statement(
    raw: bytes | str,
    fmt: str = "csv",
    *,
    account_id: str = "unknown",
    month: Optional[str] = None,
    opening_balance_minor: Optional[int] = None,
    rules: Sequence[tuple[str, str]] = DEFAULT_CATEGORY_RULES,
) -> BankStatement:
    """Parse a structured statement file into a :class:`BankStatement`.

    CSV files carry only ``date,description,amount,balance``; the account,
    month and opening balance come from keyword arguments (the opening
    balance defaults to the balance implied by the first row). JSON files
    carry ``account_id``, ``month`` and ``opening_balance`` themselves.
    """
    text = raw.decode("utf-8-sig") if isinstance(raw, (bytes, bytearray)) else raw
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise StatementError("MISSING_COLUMN", "empty file: header row required")
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise StatementError("MISSING_COLUMN", f"missing columns {missing}", columns=missing)
        pos = {c: header.index(c) for c in REQUIRED_COLUMNS}
        rows = []
        for fields in reader:
            if not fields or all(not f.strip() for f in fields):
                continue
            if len(fields) != len(header):
                raise StatementError("MALFORMED_ROW", f"expected {len(header)} fields, got {len(fields)}",
                                     row=reader.line_num)
            rows.append((reader.line_num, {c: fields[i] for c, i in pos.items()}))
        return _build_statement(rows, account_id, month, opening_balance_minor, rules)
    if fmt == "json":
        try:
            doc = json.loads(text, parse_float=Decimal)
        except json.JSONDecodeError as exc:
            raise StatementError("MALFORMED_ROW", f"invalid JSON: {exc}", row=exc.lineno)
        return statement_from_dict(doc, rules=rules)
    raise StatementError("UNSUPPORTED_FORMAT", f"unknown format {fmt!r}")


def statement_from_dict(doc: dict, rules: Sequence[tuple[str, str]] = DEFAULT_CATEGORY_RULES) -> BankStatement:
    if not isinstance(doc, dict):
        raise StatementError("MALFORMED_ROW", "statement document must be an object")
    for key in ("account_id", "month", "opening_balance", "transactions"):
        if key not in doc:
            raise StatementError("MISSING_COLUMN", f"missing field {key!r}", columns=[key])
    rows = []
    for i, rec in enumerate(doc["transactions"], start=1):
        if not isinstance(rec, dict):
            raise StatementError("MALFORMED_ROW", "transaction must be an object", row=i)
        missing = [c for c in REQUIRED_COLUMNS if c not in rec]
        if missing:
            raise StatementError("MISSING_COLUMN", f"row {i} missing {missing}", columns=missing, row=i)
        rows.append((i, rec))
    opening = parse_money(doc["opening_balance"])
    return _build_statement(rows, str(doc["account_id"]), str(doc["month"]), opening, rules)


def serialize_statement(s: BankStatement, fmt: str = "csv") -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS)
        for t in s.transactions:
            w.writerow([t.txn_date.isoformat(), t.description,
                        format_money(t.amount_minor), format_money(t.balance_after_minor)])
        return buf.getvalue().encode("utf-8")
    if fmt == "json":
        return (json.dumps(s.to_dict(), indent=1) + "\n").encode("utf-8")
    raise StatementError("UNSUPPORTED_FORMAT", f"unknown format {fmt!r}")


@dataclass(frozen=True)
class AbnormalityReport:
    account_id: str
    month: str
    flags: tuple[str, ...] = ()
    severity: Optional[str] = None

    def __post_init__(self):
        if bool(self.flags) != (self.severity is not None):
            raise ValueError("severity must be set iff flags are present")

    @property
    def statement_ref(self) -> tuple[str, str]:
        return (self.account_id, self.month)

    @property
    def rejected(self) -> bool:
        return self.severity == "reject"

    def to_json(self) -> str:
        return json.dumps(
            {"statement_ref": {"account_id": self.account_id, "month": self.month},
             "flags": list(self.flags), "severity": self.severity},
            sort_keys=True,
        )


def validate_statement(s: BankStatement, previous: Optional[BankStatement] = None) -> AbnormalityReport:
    """Run every integrity rule over one statement.

    ``previous`` is the same account's preceding statement, when known; a
    missing month between the two raises ``GAP_MONTH``. Transactions dated
    outside the statement month are also reported as ``GAP_MONTH``.
    """
    flags = set()

    running = s.opening_balance_minor
    for t in s.transactions:
        running += t.amount_minor
        if t.balance_after_minor != running:
            flags.add("BALANCE_MISMATCH")
            running = t.balance_after_minor

    if any(c > 1 for c in Counter(t.key for t in s.transactions).values()):
        flags.add("DUPLICATE_TXN")

    if previous is not None and previous.account_id == s.account_id:
        if shift_month(previous.month, 1) != s.month:
            flags.add("GAP_MONTH")
    if any(month_of(t.txn_date) != s.month for t in s.transactions):
        flags.add("GAP_MONTH")

    if s.opening_balance_minor < 0:
        flags.add("NEGATIVE_OPENING")

    by_amount = defaultdict(list)
    for t in s.transactions:
        by_amount[t.amount_minor].append(t.txn_date)
    for amount, dates in by_amount.items():
        if amount > 0 and -amount in by_amount:
            if any(abs((d1 - d2).days) <= ROUND_TRIP_DAYS for d1 in dates for d2 in by_amount[-amount]):
                flags.add("ROUND_TRIP_PAIR")
                break

    ordered = tuple(code for code in RULE_CODES if code in flags)
    if not ordered:
        severity = None
    elif "BALANCE_MISMATCH" in flags:
        severity = "reject"
    else:
        severity = "warn"
    return AbnormalityReport(s.account_id, s.month, ordered, severity)


def write_reports(path: str | Path, reports: Iterable[AbnormalityReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def deduplicate(statements: Sequence[BankStatement]) -> list[BankStatement]:
    """Collapse exact duplicate transactions per account.

    Statements for the same ``(account, month)`` are merged in input order;
    a transaction is a duplicate when its account, date, description, amount
    and balance all match an earlier one.
    """
    merged: dict[tuple[str, str], list] = {}
    seen: dict[str, set] = defaultdict(set)
    for s in statements:
        slot = merged.setdefault(s.ref, [s.opening_balance_minor, []])
        for t in s.transactions:
            key = (t.txn_date, t.description, t.amount_minor, t.balance_after_minor)
            if key in seen[s.account_id]:
                continue
            seen[s.account_id].add(key)
            slot[1].append(t)
    out = []
    for (account, month), (opening, txns) in merged.items():
        txns.sort(key=lambda t: t.txn_date)
        out.append(BankStatement(account, month, opening, tuple(txns)))
    return out


def assemble_applicant(
    statements: Sequence[BankStatement],
    form: ApplicationForm,
    label: Optional[int] = None,
    applicant_id: Optional[str] = None,
) -> ApplicantRecord:
    """Build an applicant from exactly six consecutive monthly statements.

    Statements whose integrity report is ``reject`` are refused with
    ``STATEMENT_REJECTED``; the caller excludes the applicant.
    """
    accounts = {s.account_id for s in statements}
    if len(accounts) > 1:
        raise StatementError("MIXED_ACCOUNTS", f"statements span accounts {sorted(accounts)}")
    months = sorted({s.month for s in statements}, key=parse_month)
    if len(months) != MONTHS_REQUIRED or len(statements) != MONTHS_REQUIRED:
        raise StatementError("WRONG_MONTH_COUNT",
                             f"need {MONTHS_REQUIRED} distinct months, got {len(months)} "
                             f"across {len(statements)} statements")
    for a, b in zip(months, months[1:]):
        if shift_month(a, 1) != b:
            raise StatementError("NON_CONSECUTIVE_MONTHS", f"gap between {a} and {b}")
    if label is not None and label not in (0, 1):
        raise StatementError("INVALID_LABEL", f"label must be 0, 1 or absent, got {label!r}")

    ordered = sorted(statements, key=lambda s: parse_month(s.month))
    prev = None
    for s in ordered:
        report = validate_statement(s, prev)
        if report.rejected:
            logger.warning("rejecting statement %s: %s", s.ref, ",".join(report.flags))
            raise StatementError("STATEMENT_REJECTED", f"statement {s.ref} failed integrity checks",
                                 account_id=s.account_id, month=s.month, flags=list(report.flags))
        prev = s
    account = ordered[0].account_id
    return ApplicantRecord(
        applicant_id=applicant_id if applicant_id is not None else account,
        account_id=account,
        statements=tuple(ordered),
        form=form,
        label=label,
    )
