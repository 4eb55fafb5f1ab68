"""
Higher utilisation is not higher profit
=======================================

Two brokers serve the same three jobs. A keeps its single reserved
instance fully busy but runs the rest on-demand at cost. B reserves
everything and leaves some capacity idle, yet earns more.
"""

# %%
import numpy as np

from riskbroker import PricingConfig, Trace, simulate
from riskbroker.accounting import profit_margin
from riskbroker.broker import PureReserved, Replay

pricing = PricingConfig(contract_len=10)
jobs = Trace(np.array([0, 0, 0]), np.array([10, 10, 2]), horizon=10)

# %%
for label, strategy in (("A", Replay([True, False, False])), ("B", PureReserved())):
    res = simulate(jobs, strategy, pricing, engine="reference")
    r = profit_margin(res.ledger, 0, res.ledger.length)
    print(f"{label}: utilisation {r.utilization:.3f}  revenue {r.revenue_rho:.1f}  "
          f"cost {r.cost_omega:.1f}  margin {r.margin_psi:.2f}%")
