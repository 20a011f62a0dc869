import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cashflow_uw.errors import FeatureError
from cashflow_uw.features import (
    APP_FEATURES,
    BANK_FEATURES,
    CANONICAL_FEATURES,
    FeatureStore,
    FeatureStoreEntry,
    FeatureVector,
    build_feature_vector,
    compute_app_features,
    compute_bank_features,
    eod_balances,
)
from cashflow_uw.records import ApplicantRecord

from conftest import form, record, six_months, statement


def test_feature_counts_and_tags():
    assert len(APP_FEATURES) == 7 and len(BANK_FEATURES) == 10
    v = build_feature_vector(record(), computed_at="2024-07-01T00:00:00+00:00")
    assert list(v.values) == list(CANONICAL_FEATURES)
    assert sorted(set(v.source_tags.values())) == ["application", "bank_statement"]
    assert set(v.group_tags.values()) == {"account_behaviour", "repayment_capacity", "business_demographics"}


def test_constant_balance_no_credits():
    rec = record(six_months(opening=100_000, per_month=[[]] * 6))
    f = compute_bank_features(rec)
    assert f["bal_log_growth"] == 0.0
    assert f["cashflow_stability_cv"] == 0.0
    assert f["deposit_regularity"] == 0.0
    assert f["balance_volatility"] == 0.0
    assert f["avg_balance_6m"] == 100_000
    assert f["min_balance_ratio_3m"] == 1.0
    assert f["mean_monthly_credits"] == 0.0


def test_log_growth_ln2():
    months = [[]] * 5 + [[(1, "SALES DEPOSIT", 100_000)]]
    rec = record(six_months(opening=100_000, per_month=months))
    assert compute_bank_features(rec)["bal_log_growth"] == pytest.approx(math.log(2), abs=1e-15)


def test_deposit_regularity_full():
    rec = record(six_months(per_month=[[(3, "SALES", 1_000)]] * 6))
    assert compute_bank_features(rec)["deposit_regularity"] == 1.0


def test_eod_carry_forward():
    s = statement("2024-02", 1_000, [(3, "SALES", 500), (3, "RENT", -200), (10, "RENT", -100)])
    eod = eod_balances(s)
    assert len(eod) == 29
    assert list(eod[:2]) == [1_000, 1_000]
    assert list(eod[2:9]) == [1_300] * 7
    assert eod[-1] == 1_200


def test_bank_formulas_by_hand():
    months = [[(1, "SALES", 10_000)], [(1, "RENT", -5_000)], [], [(15, "SALES", 3_000)], [], []]
    rec = record(six_months(opening=20_000, per_month=months))
    f = compute_bank_features(rec)
    series = [eod_balances(s) for s in rec.statements]
    avg = [s.mean() for s in series]
    assert avg[0] == 30_000 and avg[1] == 25_000
    assert f["avg_balance_6m"] == pytest.approx(np.mean(avg))
    assert f["max_avg_balance_3m"] == max(avg[3:])
    assert f["min_balance_ratio_3m"] == pytest.approx(25_000 / np.mean(avg))
    assert f["min_vs_max_avg_pct_diff_3m"] == pytest.approx(100 * (25_000 - 28_000) / 28_000)
    net = np.array([10_000, -5_000, 0, 3_000, 0, 0])
    assert f["cashflow_stability_cv"] == pytest.approx(net.std() / abs(net.mean()))
    assert f["deposit_regularity"] == pytest.approx(2 / 6)
    assert f["mean_monthly_credits"] == pytest.approx(13_000 / 6)
    assert f["mean_monthly_debits"] == pytest.approx(5_000 / 6)
    assert f["balance_volatility"] == pytest.approx(np.concatenate(series).std())


@pytest.mark.parametrize("net,expected", [(200_000, 2.0), (0, 0.0), (-50_000, -0.5)])
def test_repayment_capacity(net, expected):
    entries = [[(2, "SALES", net)]] * 6 if net else [[]] * 6
    rec = record(six_months(opening=10_000_000, per_month=entries), monthly_installment_minor=100_000)
    assert compute_app_features(rec.form, rec)["repayment_capacity"] == expected


def test_form_validation():
    with pytest.raises(FeatureError):
        form(director_min_age=17)
    with pytest.raises(FeatureError):
        form(num_directors=0)
    with pytest.raises(FeatureError):
        form(monthly_installment_minor=0)


def test_vector_requires_full_feature_set():
    v = build_feature_vector(record(), computed_at="t")
    with pytest.raises(FeatureError):
        FeatureVector("x", {k: v.values[k] for k in list(v.values)[:-1]})


def _entry(aid="APP1", label=1, rec=None):
    v = build_feature_vector(rec or record(), computed_at="2024-07-01T00:00:00+00:00")
    v = FeatureVector(aid, v.values, computed_at=v.computed_at)
    return FeatureStoreEntry(aid, v.feature_set_version, v, label, "2024-07-01T00:00:00+00:00")


def test_store_round_trip(tmp_path):
    store = FeatureStore(tmp_path / "fs.jsonl")
    e = _entry()
    store.put(e)
    assert store.get("APP1") == e
    again = FeatureStore(tmp_path / "fs.jsonl")
    assert again.get("APP1") == e
    assert again.get("APP1").vector.to_dict() == e.vector.to_dict()


def test_store_duplicate_and_missing(tmp_path):
    store = FeatureStore(tmp_path / "fs.jsonl")
    store.put(_entry())
    with pytest.raises(FeatureError) as ei:
        store.put(_entry())
    assert ei.value.code == "DUPLICATE_KEY"
    with pytest.raises(FeatureError) as ei:
        store.get("nope")
    assert ei.value.code == "NOT_FOUND"
    assert len(store) == 1


def test_store_skips_torn_tail(tmp_path):
    path = tmp_path / "fs.jsonl"
    store = FeatureStore(path)
    store.put(_entry("A"))
    with open(path, "ab") as fh:
        fh.write(b'{"key": {"applicant_id": "B"')
    store2 = FeatureStore(path)
    assert len(store2) == 1
    store2.put(_entry("C"))
    assert len(FeatureStore(path)) == 2


def test_no_feature_skew(small_portfolio, tmp_path):
    p, _ = small_portfolio
    store = FeatureStore(tmp_path / "fs.jsonl")
    for r in p.records[:20]:
        v = build_feature_vector(r, computed_at="t0")
        store.put(FeatureStoreEntry(r.applicant_id, v.feature_set_version, v, r.label, "t0"))
    reread = FeatureStore(tmp_path / "fs.jsonl")
    for r in p.records[:20]:
        raw = ApplicantRecord.from_dict(r.to_dict())
        assert build_feature_vector(raw, computed_at="t0").values == reread.get(r.applicant_id).vector.values


def test_synthetic_features_finite(small_portfolio):
    _, rows = small_portfolio
    for row in rows:
        for f in BANK_FEATURES:
            assert math.isfinite(row[f])


month_entries = st.lists(st.tuples(st.integers(1, 28), st.sampled_from(["SALES", "RENT"]),
                                   st.integers(-5_000, 5_000).filter(lambda a: a != 0)), max_size=6)

RATIO = ("bal_log_growth", "min_balance_ratio_3m", "min_vs_max_avg_pct_diff_3m", "cashflow_stability_cv",
         "deposit_regularity")
LINEAR = ("avg_balance_6m", "max_avg_balance_3m", "balance_volatility", "mean_monthly_credits",
          "mean_monthly_debits")


@given(months=st.lists(month_entries, min_size=6, max_size=6), k=st.integers(2, 1000))
@settings(max_examples=150, deadline=None)
def test_scale_covariance(months, k):
    months = [sorted(m, key=lambda e: e[0]) for m in months]
    rec = record(six_months(opening=1_000_000, per_month=months))
    net_mean = sum(sum(t.amount_minor for t in s.transactions) for s in rec.statements) / 6
    assume(net_mean == 0 or abs(net_mean) >= 1)
    base = build_feature_vector(rec, computed_at="t").values
    scaled = build_feature_vector(rec.scaled(k), computed_at="t").values
    for f in RATIO + ("repayment_capacity",):
        assert scaled[f] == pytest.approx(base[f], rel=1e-9, abs=1e-12)
    for f in LINEAR:
        assert scaled[f] == pytest.approx(k * base[f], rel=1e-9, abs=1e-9)
