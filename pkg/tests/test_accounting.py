from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskbroker.accounting import (
    EntryKind,
    Ledger,
    ProfitReport,
    cashback_amount,
    cashback_due,
    lifetime_margin,
    profit_margin,
    quarter_windows,
    read_profit_csv,
    record_revenue,
    write_ledger_csv,
    write_profit_csv,
)
from riskbroker.domain import PricingConfig, UserRequest


def test_margin_basic():
    led = Ledger(10)
    led.add_revenue(2, 100.0)
    led.add_reserved_purchase(0, 30.0)
    led.add_ondemand_usage(5, 10.0)
    r = profit_margin(led, 0, 10)
    assert (r.revenue_rho, r.cost_omega, r.margin_psi) == (100.0, 40.0, 60.0)
    assert r.gross_profit == 60.0


def test_margin_undefined_without_revenue():
    led = Ledger(5)
    led.add_reserved_purchase(1, 3.0)
    assert profit_margin(led, 0, 5).margin_psi is None


def test_empty_window_rejected():
    with pytest.raises(ValueError):
        profit_margin(Ledger(5), 3, 3)


def test_cashback_never_enters_margin():
    led = Ledger(4)
    led.add_revenue(1, 10.0)
    led.add_cashback(1, 9.0)
    assert profit_margin(led, 0, 4).margin_psi == 100.0


def test_amortized_view_spreads_contract():
    p = PricingConfig(contract_len=10)
    led = Ledger(20)
    led.add_reserved_purchase(0, p.reserved_cost)
    for t in range(10):
        led.add_occupancy(t, 1, 1)
        led.add_revenue(t, 1.0)
    r = profit_margin(led, 0, 5, p, reserved_view="amortized")
    assert r.cost_omega == pytest.approx(2.0)
    assert r.utilization == 1.0


def test_record_revenue_books_at_termination():
    led = Ledger(10)
    record_revenue(led, UserRequest("a", 2, 7), 5, 1.5)
    assert led.revenue[7] == 7.5 and led.revenue.sum() == 7.5


def test_cashback_bounds():
    assert cashback_amount(None, 10, 1.0) == 0.0
    assert cashback_amount(-5.0, 10, 1.0) == 0.0
    assert cashback_amount(20.0, 10, 0.5) == pytest.approx(1.0)
    assert lifetime_margin(0, 5) is None
    assert lifetime_margin(10, 4) == 60.0


def test_cashback_due_uses_rental_window():
    p = PricingConfig(contract_len=10)
    led = Ledger(20)
    led.add_revenue(3, 10.0)
    led.add_reserved_purchase(3, 4.0)
    led.add_revenue(15, 100.0)
    amt = cashback_due(led, UserRequest("a", 0, 10), p)
    assert amt == pytest.approx(0.6 * 10)
    assert led.cashback[10] == pytest.approx(6.0)


def test_quarter_windows_stretch_last():
    assert quarter_windows(10, 4) == [(0, 4), (4, 8), (8, 11)]
    assert quarter_windows(8, 4) == [(0, 4), (4, 9)]
    with pytest.raises(ValueError):
        quarter_windows(8, 0)


@given(st.lists(st.tuples(st.integers(0, 49), st.floats(0, 100), st.floats(0, 100)), max_size=40),
       st.integers(1, 49))
def test_window_sums_are_additive(rows, cut):
    led = Ledger(50)
    for t, rev, cost in rows:
        led.add_revenue(t, rev)
        led.add_ondemand_usage(t, cost)
    a, b, whole = profit_margin(led, 0, cut), profit_margin(led, cut, 50), profit_margin(led, 0, 50)
    assert a.revenue_rho + b.revenue_rho == pytest.approx(whole.revenue_rho)
    assert a.cost_omega + b.cost_omega == pytest.approx(whole.cost_omega)
    if whole.margin_psi is not None:
        assert whole.margin_psi <= 100.0


def test_profit_csv_round_trip(tmp_path):
    reps = [ProfitReport(0, 5, 10.0, 4.0, 60.0, 0.5), ProfitReport(5, 9, 0.0, 1.0, None, None)]
    p = tmp_path / "p.csv"
    write_profit_csv(reps, p)
    assert read_profit_csv(p) == reps


def test_ledger_csv_aggregated_and_itemized(tmp_path):
    led = Ledger(5)
    led.add_reserved_purchase(1, 4.0)
    led.add_revenue(3, 2.5)
    p = tmp_path / "l.csv"
    write_ledger_csv(led, p)
    assert p.read_text().splitlines() == [
        "time,kind,amount,id", "1,ReservedPurchase,4.0,", "3,Revenue,2.5,"]
    it = Ledger(5, itemize=True)
    it.add_reserved_purchase(1, 4.0, "r0")
    it.add_ondemand_bill(2, 1.0, "q1")
    assert [e.kind for e in it.items] == [EntryKind.RESERVED_PURCHASE, EntryKind.ONDEMAND_USAGE]


def test_same_books():
    a, b = Ledger(3), Ledger(3)
    a.add_cashback(1, 1.0)
    b.add_cashback(1, 1.0 + 1e-12)
    assert not a.same_books(b) and a.same_books(b, cashback_rtol=1e-9)
    assert np.array_equal(a.revenue, b.revenue)
