"""
Correlation tests and forecast error
====================================

Correlate the per-quarter profit gap (best case minus pure reserved) with
workload drivers, and measure how far the Auto-ARIMA forecasts drift from
the demand they predicted.
"""

# %%
import numpy as np

from riskbroker import PricingConfig, simulate
from riskbroker.accounting import quarter_windows
from riskbroker.analysis import (
    arima_error_periods,
    compare_strategies,
    correlation_table,
    error_summary,
    estimation_error_series,
    quarterly_drivers,
)
from riskbroker.broker import ArimaSettings
from riskbroker.domain import DAY, HOUR
from riskbroker.trace import DATASET2, synthesize_trace

trace = synthesize_trace(DATASET2, horizon=6 * DAY, seed=8)
pricing = PricingConfig(contract_len=DAY)
q = 6 * HOUR
arima = ArimaSettings(grid_max=(1, 1, 1), refit_period=2 * HOUR, bin_len=15)
runs = {n: simulate(trace, n, pricing, seed=8, arima=arima)
        for n in ("risk_taking", "best_case", "pure_reserved", "auto_arima")}

# %%
psi = {n: [r.margin_psi for r in res.quarterly(q)] for n, res in runs.items()}
table = compare_strategies(psi)
drivers = quarterly_drivers(runs["risk_taking"], quarter_windows(trace.horizon, q))
for name, method, res, note in correlation_table(table.difference, drivers):
    if res is None:
        print(f"{name:10s} {method.value:8s} undefined ({note})")
    else:
        print(f"{name:10s} {method.value:8s} {res.coefficient:+.3f}  p={res.p_value:.3f}")

# %%
periods = arima_error_periods(runs["auto_arima"], arima.bin_len)
errors = estimation_error_series([f for _, f, _ in periods], [a for _, _, a in periods])
s = error_summary(errors)
print(f"{s.n_used} forecast periods, mean error {s.mean_pct:+.1f}%, "
      f"mean absolute {s.mean_abs_pct:.1f}%, excluded {s.n_excluded}")
print("over-estimated periods:", int(np.sum(errors[np.isfinite(errors)] > 0)))
