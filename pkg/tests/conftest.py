from __future__ import annotations

import datetime as dt

import pytest

from cashflow_uw import kernels
from cashflow_uw.features import build_feature_vector
from cashflow_uw.ingest import categorize
from cashflow_uw.records import ApplicantRecord, ApplicationForm, BankStatement, Transaction, shift_month
from cashflow_uw.synth import GeneratorConfig, generate_portfolio


def statement(month, opening, entries, account="ACC1"):
    """Build a continuous statement from ``(day, description, amount_minor)`` entries."""
    y, m = map(int, month.split("-"))
    bal = opening
    txns = []
    for day, desc, amt in entries:
        bal += amt
        txns.append(Transaction(dt.date(y, m, day), desc, amt, bal, categorize(desc)))
    return BankStatement(account, month, opening, tuple(txns))


def form(**over):
    base = dict(years_in_business=4.5, location="L01", sector_code="S01", num_directors=2,
                director_min_age=35, customer_classification="C2", monthly_installment_minor=100_000)
    base.update(over)
    return ApplicationForm(**base)


def six_months(start="2024-01", opening=100_000, per_month=None, account="ACC1"):
    per_month = per_month or [[(5, "SALES DEPOSIT", 50_000), (20, "SUPPLIER PAYMENT", -30_000)]] * 6
    out = []
    bal = opening
    for i, entries in enumerate(per_month):
        s = statement(shift_month(start, i), bal, entries, account)
        out.append(s)
        bal = s.closing_balance_minor
    return out


def record(statements=None, label=None, **form_over):
    statements = statements or six_months()
    return ApplicantRecord("APP1", statements[0].account_id, tuple(statements), form(**form_over), label)


@pytest.fixture(scope="session")
def small_portfolio():
    p = generate_portfolio(GeneratorConfig(seed=3, n_applicants=200))
    rows = [build_feature_vector(r, computed_at="t").values for r in p.records]
    return p, rows


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    return kernels.available_backends()[request.param]


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return ok

    return record


_VERDICTS = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
