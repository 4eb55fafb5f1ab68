"""
How close is the greedy oracle to the true optimum?
===================================================

On small traces every reserved/on-demand decision sequence can be searched
exhaustively. The greedy best case is compared against that optimum.
"""

# %%
import numpy as np

from riskbroker import PricingConfig, simulate
from riskbroker.oracle import optimal_ledger
from riskbroker.trace import Trace


def instance(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(10, 61))
    H = int(rng.integers(2 * L, 4 * L + 1))
    n = int(rng.integers(5, 21))
    s = np.sort(rng.integers(0, H - 1, n))
    e = np.minimum(s + rng.integers(1, 2 * L, n), H)
    return Trace(s, e, H), PricingConfig(contract_len=L)


# %%
ratios = []
for seed in range(60):
    tr, pr = instance(seed)
    opt = optimal_ledger(tr, pr)
    t = simulate(tr, "best_case", pr, engine="reference").ledger.totals()
    greedy = opt.revenue - t["reserved_cost"] - t["ondemand_cost"]
    ratios.append(greedy / opt.profit if opt.profit > 0 else 1.0)

ratios = np.array(ratios)
print(f"share within 90% of optimum: {np.mean(ratios >= 0.9):.0%}")
print(f"worst ratio {ratios.min():.3f}, median {np.median(ratios):.3f}")
