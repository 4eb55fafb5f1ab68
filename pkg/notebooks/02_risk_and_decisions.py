"""
Risk factors and the reserve-or-not draw
========================================

Each factor maps broker state onto [0, 1]. Their weighted sum, nudged by
the revenue trend, sets the chance of buying a reserved instance.
"""

# %%
import math

import numpy as np

from riskbroker.domain import Reserved, ResourcePool
from riskbroker.risk import (
    RiskVector,
    aggregate_risk,
    anomaly_risk,
    decide_many,
    pool_volume_risk,
    reserved_probability,
    window_stats,
)

# %%
# Anomaly risk: zero at the recent mean, one at mean + 2 sd.
history = np.array([40, 55, 38, 61, 47, 52, 44, 49])
stats = window_stats(history, len(history), 8)
for now in (45, 55, 60, 70):
    print(f"{now} arrivals vs mean {stats.mean:.1f}, sd {stats.sd:.1f}: "
          f"risk {anomaly_risk(now, stats):.3f}")

# %%
# Volume risk: remaining contract time across the pool, as a share of the maximum.
pool = ResourcePool()
L = 100
for bought in (0, 30, 90):
    pool.create(Reserved(bought, L))
print("volume risk at t=90:", pool_volume_risk(pool, 90, L))

# %%
r = aggregate_risk(RiskVector(0.2, 0.5, pool_volume_risk(pool, 90, L), revenue_adjustment=-0.05))
print(f"aggregated risk {r:.3f}")

# %%
# Even at maximum risk about 31% of requests still get reserved capacity.
rng = np.random.default_rng(0)
u = rng.random(200_000)
for r in (0.0, 0.25, 0.5, 0.75, 1.0):
    print(f"r={r:.2f}: empirical {decide_many(r, u).mean():.4f}  "
          f"closed form {reserved_probability(r):.4f}  1 - r ln2 = {1 - min(r * math.log(2), 1):.4f}")
