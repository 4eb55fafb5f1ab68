"""Money flows and the gross profit margin over reporting windows.

The ledger keeps one dense per-minute column per entry kind, which makes
window sums exact folds and keeps multi-year runs cheap. Itemized entries
(one row per request or resource) are optional and meant for small runs.

Sign conventions at aggregation: revenue counts toward rho; reserved
purchases and on-demand usage toward omega; cashback is tracked separately
and never enters the margin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .domain import QUARTER, PricingConfig, UserRequest


class EntryKind(Enum):
    RESERVED_PURCHASE = "ReservedPurchase"
    ONDEMAND_USAGE = "OnDemandUsage"
    REVENUE = "Revenue"
    CASHBACK = "Cashback"


@dataclass(frozen=True)
class LedgerEntry:
    time: int
    kind: EntryKind
    amount: float
    ref: str = ""


@dataclass(frozen=True)
class ProfitReport:
    t1: int
    t2: int
    revenue_rho: float
    cost_omega: float
    margin_psi: float | None
    utilization: float | None

    @property
    def gross_profit(self) -> float:
        return self.revenue_rho - self.cost_omega


class Ledger:
    def __init__(self, length: int, itemize: bool = False):
        # One slot per minute in [0, length); the last slot of a run holds the
        # settlement of requests that close at the horizon.
        self.length = int(length)
        self.revenue = np.zeros(self.length)
        self.reserved_cost = np.zeros(self.length)
        self.ondemand_cost = np.zeros(self.length)
        self.cashback = np.zeros(self.length)
        self.pool_minutes = np.zeros(self.length, dtype=np.int64)
        self.busy_minutes = np.zeros(self.length, dtype=np.int64)
        self.items: list[LedgerEntry] | None = [] if itemize else None

    def _item(self, time, kind, amount, ref):
        if self.items is not None:
            self.items.append(LedgerEntry(int(time), kind, float(amount), str(ref)))

    def add_revenue(self, time: int, amount: float, ref="") -> None:
        self.revenue[time] += amount
        self._item(time, EntryKind.REVENUE, amount, ref)

    def add_reserved_purchase(self, time: int, amount: float, ref="") -> None:
        self.reserved_cost[time] += amount
        self._item(time, EntryKind.RESERVED_PURCHASE, amount, ref)

    def add_ondemand_usage(self, time: int, amount: float, ref="") -> None:
        self.ondemand_cost[time] += amount

    def add_ondemand_bill(self, time: int, amount: float, ref="") -> None:
        """Itemized on-demand bill at release.

        The margin uses the per-minute accrual column, so this only feeds
        the itemized export.
        """
        self._item(time, EntryKind.ONDEMAND_USAGE, amount, ref)

    def add_cashback(self, time: int, amount: float, ref="") -> None:
        self.cashback[time] += amount
        self._item(time, EntryKind.CASHBACK, amount, ref)

    def add_occupancy(self, time: int, pool: int, busy: int) -> None:
        self.pool_minutes[time] += pool
        self.busy_minutes[time] += busy

    def rho(self, t1: int, t2: int) -> float:
        return float(np.sum(self.revenue[t1:t2]))

    def omega(self, t1: int, t2: int) -> float:
        return float(np.sum(self.reserved_cost[t1:t2]) + np.sum(self.ondemand_cost[t1:t2]))

    def totals(self) -> dict[str, float]:
        return {
            "revenue": float(self.revenue.sum()),
            "reserved_cost": float(self.reserved_cost.sum()),
            "ondemand_cost": float(self.ondemand_cost.sum()),
            "cashback": float(self.cashback.sum()),
        }

    def aggregated_entries(self):
        """Per-minute, per-kind totals as ledger entries (zero rows omitted)."""
        columns = [
            (EntryKind.RESERVED_PURCHASE, self.reserved_cost),
            (EntryKind.ONDEMAND_USAGE, self.ondemand_cost),
            (EntryKind.REVENUE, self.revenue),
            (EntryKind.CASHBACK, self.cashback),
        ]
        stacked = np.stack([c for _, c in columns])
        for t in np.flatnonzero(stacked.any(axis=0)).tolist():
            for k, (kind, col) in enumerate(columns):
                v = stacked[k, t]
                if v:
                    yield LedgerEntry(t, kind, float(v), "")

    def same_books(self, other: "Ledger", cashback_rtol: float = 0.0) -> bool:
        ok = (
            self.length == other.length
            and np.array_equal(self.revenue, other.revenue)
            and np.array_equal(self.reserved_cost, other.reserved_cost)
            and np.array_equal(self.ondemand_cost, other.ondemand_cost)
            and np.array_equal(self.pool_minutes, other.pool_minutes)
            and np.array_equal(self.busy_minutes, other.busy_minutes)
        )
        if cashback_rtol:
            return ok and np.allclose(self.cashback, other.cashback, rtol=cashback_rtol, atol=1e-9)
        return ok and np.array_equal(self.cashback, other.cashback)


def record_revenue(ledger: Ledger, request: UserRequest, usage_minutes: int,
                   rate: float) -> Ledger:
    ledger.add_revenue(request.end_time, rate * usage_minutes, request.request_id)
    return ledger


def _check_window(t1: int, t2: int) -> None:
    if t1 >= t2:
        raise ValueError(f"empty reporting window [{t1}, {t2})")


def profit_margin(ledger: Ledger, t1: int, t2: int, pricing: PricingConfig | None = None,
                  reserved_view: str = "purchase") -> ProfitReport:
    """Revenue, cost and margin over ``[t1, t2)``.

    ``reserved_view="amortized"`` spreads each contract evenly over its
    lifetime instead of booking it at purchase; it is a reporting aid and
    needs `pricing`.
    """
    _check_window(t1, t2)
    rho = ledger.rho(t1, t2)
    if reserved_view == "purchase":
        omega = ledger.omega(t1, t2)
    elif reserved_view == "amortized":
        if pricing is None:
            raise ValueError("amortized view needs pricing")
        per_minute = pricing.reserved_cost / pricing.contract_len
        omega = float(np.sum(ledger.pool_minutes[t1:t2]) * per_minute
                      + np.sum(ledger.ondemand_cost[t1:t2]))
    else:
        raise ValueError(f"unknown reserved_view {reserved_view!r}")
    psi = 100.0 * (rho - omega) / rho if rho > 0 else None
    pool = int(np.sum(ledger.pool_minutes[t1:t2]))
    util = int(np.sum(ledger.busy_minutes[t1:t2])) / pool if pool else None
    return ProfitReport(t1, t2, rho, omega, psi, util)


def lifetime_margin(cum_revenue: float, cum_cost: float) -> float | None:
    return 100.0 * (cum_revenue - cum_cost) / cum_revenue if cum_revenue > 0 else None


def cashback_amount(psi_lifetime: float | None, spend: float, fraction: float) -> float:
    """At most the broker's margin over the rental, as a share of the spend."""
    if psi_lifetime is None or psi_lifetime <= 0 or fraction == 0:
        return 0.0
    return fraction * psi_lifetime / 100.0 * spend


def cashback_due(ledger: Ledger, request: UserRequest, pricing: PricingConfig,
                 record: bool = True) -> float:
    """Cashback owed when `request` terminates, from the margin over its lifetime."""
    report = None
    if request.start_time < request.end_time:
        report = profit_margin(ledger, request.start_time, request.end_time)
    spend = pricing.ondemand_rate * request.usage
    amount = cashback_amount(report.margin_psi if report else None, spend,
                             pricing.cashback_fraction)
    if record and amount:
        ledger.add_cashback(request.end_time, amount, request.request_id)
    return amount


def quarter_windows(horizon: int, quarter_len: int = QUARTER, length: int | None = None):
    """``[k*q, (k+1)*q)`` windows covering the horizon.

    The last window is stretched to `length` so horizon-time settlements
    are not dropped.
    """
    if quarter_len <= 0:
        raise ValueError("quarter_len must be positive")
    length = horizon + 1 if length is None else length
    out = []
    for lo in range(0, max(horizon, 1), quarter_len):
        out.append([lo, min(lo + quarter_len, horizon)])
    if out:
        out[-1][1] = max(out[-1][1], length)
    return [tuple(w) for w in out]


def quarterly_series(ledger: Ledger, horizon: int, quarter_len: int = QUARTER) -> list[ProfitReport]:
    return [profit_margin(ledger, a, b) for a, b in quarter_windows(horizon, quarter_len, ledger.length)]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_ledger_csv(ledger: Ledger, path) -> None:
    """``time,kind,amount,id`` rows; itemized when available, else per-minute totals."""
    entries = ledger.items if ledger.items is not None else ledger.aggregated_entries()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("time,kind,amount,id\n")
        lines = []
        for e in entries:
            lines.append(f"{e.time},{e.kind.value},{repr(e.amount)},{e.ref}\n")
            if len(lines) >= 1 << 16:
                fh.writelines(lines)
                lines.clear()
        fh.writelines(lines)


def write_profit_csv(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t1", "t2", "rho", "omega", "psi", "utilization"])
        for r in reports:
            w.writerow([r.t1, r.t2, _fmt(r.revenue_rho), _fmt(r.cost_omega),
                        _fmt(r.margin_psi), _fmt(r.utilization)])


def read_profit_csv(path) -> list[ProfitReport]:
    def opt(v):
        return float(v) if v != "" else None

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        ProfitReport(int(r["t1"]), int(r["t2"]), float(r["rho"]), float(r["omega"]),
                     opt(r["psi"]), opt(r["utilization"]))
        for r in rows
    ]
