"""
Workload traces
===============

Synthesise per-minute arrivals that match the two reference profiles,
then stretch a short trace to a longer horizon by block bootstrap.
"""

# %%
import numpy as np

from riskbroker.domain import DAY, HOUR
from riskbroker.trace import DATASET1, DATASET2, resample_trace, synthesize_trace, trace_stats

# %%
# Dataset-1 is busy and fairly steady; Dataset-2 is sparse with huge spikes.
for name, profile in (("dataset1", DATASET1), ("dataset2", DATASET2)):
    t = synthesize_trace(profile, horizon=7 * DAY, seed=0)
    s = trace_stats(t)
    zeros = np.mean(t.arrival_counts() == 0)
    print(f"{name}: target {profile.mean}/{profile.sd}, got {s.mean:.2f}/{s.sd:.2f}, "
          f"max {s.max:.0f}, idle minutes {zeros:.0%}, {len(t)} requests")

# %%
# Durations are log-normal with a 30-minute median by default.
d = t.durations
print("duration quartiles (min):", np.percentile(d, [25, 50, 75]))

# %%
# A 12-hour source resampled to 30 days keeps its rate and its durations.
src = synthesize_trace(DATASET1, horizon=12 * HOUR, seed=1)
long = resample_trace(src, 30 * DAY, seed=1)
a, b = trace_stats(src), trace_stats(long)
print(f"source   mean {a.mean:.2f} sd {a.sd:.2f}")
print(f"resample mean {b.mean:.2f} sd {b.sd:.2f}")
