"""Risk factors, the weighted linear analyser, and the stochastic decision rule.

Every factor maps broker state onto [0, 1], where 1 means "stocking another
reserved instance now is as dangerous as it gets".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .domain import ResourcePool

LN2 = math.log(2.0)


class RiskConfigError(ValueError):
    pass


class Choice(Enum):
    RESERVED = "CreateReserved"
    ON_DEMAND = "CreateOnDemand"


@dataclass
class RiskConfig:
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    anomaly_window_frac: float = 0.10
    sd_multiplier: float = 2.0
    adjustment_step: float = 0.05
    decision_threshold: float = 0.5
    decision_threshold_mode: str = "geq"
    clamp: bool = True

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        problems = self.problems()
        if problems:
            raise RiskConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if len(self.weights) != 3:
            out.append("weights needs exactly three entries")
        if any(w < 0 for w in self.weights):
            out.append("weights must be non-negative")
        if not 0 < self.anomaly_window_frac <= 1:
            out.append("anomaly_window_frac must be in (0, 1]")
        if not self.sd_multiplier > 0:
            out.append("sd_multiplier must be positive")
        if not 0 <= self.adjustment_step <= 1:
            out.append("adjustment_step must be in [0, 1]")
        if not 0 <= self.decision_threshold <= 1:
            out.append("decision_threshold must be in [0, 1]")
        if self.decision_threshold_mode not in ("geq", "leq"):
            out.append("decision_threshold_mode must be 'geq' or 'leq'")
        return out

    def window_len(self, contract_len: int) -> int:
        return max(1, int(round(self.anomaly_window_frac * contract_len)))


@dataclass(frozen=True)
class WindowStats:
    mean: float
    sd: float
    window_len: int


def window_stats(series: Sequence[float], now: int, window_len: int) -> WindowStats:
    """Mean and population sd of ``series[now - window_len : now]``.

    Shorter histories use whatever is there; no history gives (0, 0).
    Computed from raw first and second moments, matching the engine's
    running sums bit for bit on integer-valued series.
    """
    lo = max(0, now - window_len)
    x = np.asarray(series[lo:now], dtype=np.float64)
    n = len(x)
    if n == 0:
        return WindowStats(0.0, 0.0, window_len)
    s1 = float(np.sum(x))
    s2 = float(np.sum(x * x))
    mean = s1 / n
    var = s2 / n - mean * mean
    return WindowStats(mean, math.sqrt(var) if var > 0 else 0.0, window_len)


def anomaly_risk(current: float, stats: WindowStats, sd_multiplier: float = 2.0) -> float:
    """0 below the mean, linear up to mean + k*sd, then 1.

    A zero sd is the limiting case: 0 at or below the mean, 1 above it.
    """
    mean, sd = stats.mean, stats.sd
    if current < mean:
        return 0.0
    band = sd_multiplier * sd
    if band == 0:
        return 0.0 if current <= mean else 1.0
    if current > mean + band:
        return 1.0
    return min(1.0, (current - mean) / band)


def pool_count_risk(current_count: float, stats: WindowStats, sd_multiplier: float = 2.0) -> float:
    return anomaly_risk(current_count, stats, sd_multiplier)


def volume_ratio(total_remaining: int, count: int, contract_len: int) -> float:
    if count == 0:
        return 0.0
    return total_remaining / (count * contract_len)


def pool_volume_risk(pool: ResourcePool, now: int, contract_len: int) -> float:
    total, count = pool.volume(now)
    return volume_ratio(total, count, contract_len)


@dataclass
class RiskVector:
    anomaly: float
    pool_count: float
    pool_volume: float
    revenue_adjustment: float = 0.0
    weights: tuple[float, float, float] = field(default=(1 / 3, 1 / 3, 1 / 3))

    def weighted_sum(self) -> float:
        w = self.weights
        return w[0] * self.anomaly + w[1] * self.pool_count + w[2] * self.pool_volume


def aggregate_risk(factors: RiskVector, clamp: bool = True) -> float:
    if any(w < 0 for w in factors.weights):
        raise RiskConfigError("weights must be non-negative")
    r = factors.weighted_sum() + factors.revenue_adjustment
    if clamp:
        r = min(1.0, max(0.0, r))
    return r


def revenue_adjustment(revenue_recent: float, revenue_previous: float, step: float = 0.05) -> float:
    """Rising revenue lowers risk by `step`, falling revenue raises it."""
    if revenue_recent > revenue_previous:
        return -step
    if revenue_recent < revenue_previous:
        return step
    return 0.0


def decision_value(r: float, draw: float) -> float:
    """S(r) = 1 at zero risk, else 1 - exp(-draw / r)."""
    if r == 0:
        return 1.0
    return 1.0 - math.exp(-draw / r)


def _check_r(r: float) -> None:
    if not 0.0 <= r <= 1.0 or math.isnan(r):
        raise RiskConfigError(f"aggregated risk {r!r} outside [0, 1]")


def decide(r: float, draw: float, threshold: float = 0.5, mode: str = "geq") -> Choice:
    _check_r(r)
    s = decision_value(r, draw)
    take = s >= threshold if mode == "geq" else s <= threshold
    return Choice.RESERVED if take else Choice.ON_DEMAND


def decide_many(r: float, draws: np.ndarray, threshold: float = 0.5, mode: str = "geq") -> np.ndarray:
    """Vectorised `decide`; True marks CreateReserved."""
    _check_r(r)
    draws = np.asarray(draws, dtype=np.float64)
    if r == 0:
        s = np.ones_like(draws)
    else:
        # a subnormal r overflows draws / r to inf, which still gives S = 1
        with np.errstate(over="ignore"):
            s = 1.0 - np.exp(-draws / r)
    return s >= threshold if mode == "geq" else s <= threshold


def reserved_probability(r: float, threshold: float = 0.5, mode: str = "geq") -> float:
    """Closed-form P(CreateReserved) for a uniform draw.

    Under the default rule this is ``1 - min(r ln 2, 1)``.
    """
    _check_r(r)
    if r == 0:
        ok = 1.0 >= threshold if mode == "geq" else 1.0 <= threshold
        return 1.0 if ok else 0.0
    # S >= t  <=>  draw >= -r ln(1 - t)
    cut = math.inf if threshold >= 1 else -r * math.log1p(-threshold)
    p_geq = 1.0 - min(cut, 1.0)
    return p_geq if mode == "geq" else 1.0 - p_geq
