from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskbroker.domain import Reserved, ResourcePool
from riskbroker.risk import (
    Choice,
    RiskConfig,
    RiskConfigError,
    RiskVector,
    WindowStats,
    aggregate_risk,
    anomaly_risk,
    decide,
    decide_many,
    decision_value,
    pool_count_risk,
    pool_volume_risk,
    reserved_probability,
    revenue_adjustment,
    volume_ratio,
    window_stats,
)

# (current, mean, sd, k, expected), worked by hand
ANOMALY_CASES = [
    (5.0, 10.0, 2.0, 2.0, 0.0),        # below mean
    (10.0, 10.0, 2.0, 2.0, 0.0),       # at mean
    (11.0, 10.0, 2.0, 2.0, 0.25),
    (12.0, 10.0, 2.0, 2.0, 0.5),
    (13.0, 10.0, 2.0, 2.0, 0.75),
    (14.0, 10.0, 2.0, 2.0, 1.0),       # exactly mean + 2 sd
    (14.5, 10.0, 2.0, 2.0, 1.0),       # above the band
    (3.0, 3.0, 0.0, 2.0, 0.0),         # sd = 0, at mean
    (3.5, 3.0, 0.0, 2.0, 1.0),         # sd = 0, above mean
    (2.0, 3.0, 0.0, 2.0, 0.0),         # sd = 0, below mean
    (0.0, 0.0, 0.0, 2.0, 0.0),         # empty history
    (1.0, 0.0, 0.0, 2.0, 1.0),         # first arrivals after silence
    (7.0, 4.0, 3.0, 1.0, 1.0),         # k = 1
    (5.5, 4.0, 3.0, 1.0, 0.5),
    (77.0, 77.0, 370.43, 2.0, 0.0),
    (2 * 370.43 + 77.0 - 370.43, 77.0, 370.43, 2.0, 0.5),
]

# (count, mean, sd, expected)
COUNT_CASES = [
    (0, 0.0, 0.0, 0.0),
    (1, 0.0, 0.0, 1.0),
    (4, 4.0, 0.0, 0.0),
    (5, 4.0, 0.0, 1.0),
    (3, 4.0, 1.0, 0.0),
    (4, 4.0, 1.0, 0.0),
    (5, 4.0, 1.0, 0.5),
    (6, 4.0, 1.0, 1.0),
    (7, 4.0, 1.0, 1.0),
    (100, 90.0, 10.0, 0.5),
    (95, 90.0, 10.0, 0.25),
    (115, 90.0, 10.0, 1.0),
    (1, 0.5, 0.5, 0.5),
]

# (remaining contract minutes per instance, now, L, expected)
VOLUME_CASES = [
    ([], 0, 100, 0.0),                          # empty pool
    ([100], 0, 100, 1.0),                       # fresh purchase
    ([50], 0, 100, 0.5),
    ([1], 0, 100, 0.01),
    ([100, 50], 0, 100, 0.75),
    ([100, 100, 100], 0, 100, 1.0),
    ([10, 20, 30, 40], 0, 100, 0.25),
    ([60, 60], 0, 120, 0.5),
    ([129600], 0, 129600, 1.0),
    ([64800, 129600], 0, 129600, 0.75),
    ([1, 2, 3], 0, 3, 2.0 / 3.0),
    ([7], 0, 8, 0.875),
]


@pytest.mark.parametrize("cur,mean,sd,k,expected", ANOMALY_CASES)
def test_anomaly_fixtures(cur, mean, sd, k, expected):
    assert abs(anomaly_risk(cur, WindowStats(mean, sd, 10), k) - expected) <= 1e-12


@pytest.mark.parametrize("cur,mean,sd,expected", COUNT_CASES)
def test_pool_count_fixtures(cur, mean, sd, expected):
    assert abs(pool_count_risk(cur, WindowStats(mean, sd, 10)) - expected) <= 1e-12


def pool_with_remaining(remaining, L):
    """Pool whose reserved contracts have the given remaining minutes at now = L."""
    pool = ResourcePool()
    for rem in remaining:
        pool.create(Reserved(purchase_time=rem, contract_len=L))
    return pool, L


@pytest.mark.parametrize("remaining,_now,L,expected", VOLUME_CASES)
def test_pool_volume_fixtures(remaining, _now, L, expected):
    pool, now = pool_with_remaining(remaining, L)
    assert pool.volume(now) == (sum(remaining), len(remaining))
    assert abs(pool_volume_risk(pool, now, L) - expected) <= 1e-12


def test_volume_ignores_expired_contracts():
    pool = ResourcePool()
    pool.create(Reserved(0, 10))
    pool.create(Reserved(5, 10))
    assert pool_volume_risk(pool, 10, 10) == 0.5
    assert pool_volume_risk(pool, 15, 10) == 0.0


def test_window_stats_uses_population_sd():
    s = window_stats([2, 4, 4, 4, 5, 5, 7, 9, 100], 8, 8)
    assert s.mean == 5.0 and s.sd == 2.0


def test_window_stats_short_and_empty_history():
    assert window_stats([3, 5, 1], 2, 10) == WindowStats(4.0, 1.0, 10)
    assert window_stats([3, 5], 0, 10) == WindowStats(0.0, 0.0, 10)


def test_window_excludes_current_minute():
    s = window_stats([1, 1, 1, 50], 3, 3)
    assert (s.mean, s.sd) == (1.0, 0.0)


def test_aggregate_clamps_both_sides():
    assert aggregate_risk(RiskVector(1, 1, 1, 0.05)) == 1.0
    assert aggregate_risk(RiskVector(0, 0, 0, -0.05)) == 0.0
    assert aggregate_risk(RiskVector(1, 1, 1, 0.05), clamp=False) == pytest.approx(1.05)
    assert aggregate_risk(RiskVector(0.3, 0.6, 0.9, 0.0)) == pytest.approx(0.6)


def test_aggregate_rejects_negative_weights():
    with pytest.raises(RiskConfigError):
        aggregate_risk(RiskVector(0.5, 0.5, 0.5, 0.0, (0.5, -0.1, 0.6)))


def test_revenue_adjustment_sign():
    assert revenue_adjustment(10, 5) == -0.05
    assert revenue_adjustment(5, 10) == 0.05
    assert revenue_adjustment(7, 7) == 0.0


def test_decision_value_at_zero_risk_is_one():
    assert decision_value(0.0, 0.0) == 1.0
    assert decide(0.0, 0.0) is Choice.RESERVED


def test_decide_threshold_orientation():
    # S = 1 - exp(-u/r) >= 0.5  <=>  u >= r ln 2
    r = 0.5
    cut = r * math.log(2)
    assert decide(r, cut + 1e-9) is Choice.RESERVED
    assert decide(r, cut - 1e-9) is Choice.ON_DEMAND
    assert decide(r, cut - 1e-9, mode="leq") is Choice.RESERVED


def test_decide_rejects_out_of_range_risk():
    for bad in (-0.01, 1.01, float("nan")):
        with pytest.raises(RiskConfigError):
            decide(bad, 0.5)


def test_reserved_probability_closed_form():
    for r in (0.0, 0.1, 0.5, 0.9, 1.0):
        assert reserved_probability(r) == pytest.approx(1 - min(r * math.log(2), 1), abs=1e-15)


def test_config_validation_aggregates_problems():
    with pytest.raises(RiskConfigError) as exc:
        RiskConfig(weights=(1, -1, 1), sd_multiplier=0, decision_threshold_mode="gt")
    msg = str(exc.value)
    assert "non-negative" in msg and "sd_multiplier" in msg and "geq" in msg


def test_window_len():
    assert RiskConfig().window_len(129600) == 12960
    assert RiskConfig().window_len(5) == 1


@given(st.floats(0, 1), st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=50))
def test_decide_many_matches_scalar(r, draws):
    mask = decide_many(r, np.array(draws))
    assert mask.tolist() == [decide(r, u) is Choice.RESERVED for u in draws]


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1e4), st.floats(0.1, 5))
def test_anomaly_in_unit_interval_and_monotone(cur, mean, sd, k):
    s = WindowStats(mean, sd, 1)
    a = anomaly_risk(cur, s, k)
    assert 0.0 <= a <= 1.0
    assert anomaly_risk(cur + 1.0, s, k) >= a


@given(st.lists(st.integers(1, 500), max_size=30), st.integers(1, 500))
def test_volume_ratio_bounds(rem, L):
    rem = [min(x, L) for x in rem]
    v = volume_ratio(sum(rem), len(rem), L)
    assert 0.0 <= v <= 1.0
