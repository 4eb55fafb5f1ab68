"""Multi-seed strategy comparisons on synthetic traces."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .broker import ArimaSettings, simulate
from .domain import QUARTER, YEAR, PricingConfig
from .risk import RiskConfig
from .trace import DurationModel, TraceStats, synthesize_trace

ORDERING = (("best_case", "risk_taking"), ("risk_taking", "no_risk_adjustment"),
            ("no_risk_adjustment", "pure_reserved"), ("risk_taking", "auto_arima"))


@dataclass
class SeedOutcome:
    seed: int
    quarterly: dict[str, list]

    def mean(self, strategy: str) -> float:
        q = [v for v in self.quarterly[strategy] if v is not None]
        return float(np.mean(q)) if q else float("nan")

    def has_negative_quarter(self, strategy: str) -> bool:
        return any(v is not None and v < 0 for v in self.quarterly[strategy])


@dataclass
class OrderingReport:
    outcomes: list[SeedOutcome]
    pairs: tuple = ORDERING
    notes: list[str] = field(default_factory=list)

    def consistency(self, a: str, b: str) -> float:
        """Share of seeds where `a` has the higher (or equal) mean quarterly margin."""
        wins = [o.mean(a) >= o.mean(b) for o in self.outcomes]
        return float(np.mean(wins)) if wins else float("nan")

    def pooled_mean(self, strategy: str) -> float:
        return float(np.mean([o.mean(strategy) for o in self.outcomes]))

    def negative_share(self, strategy: str) -> float:
        return float(np.mean([o.has_negative_quarter(strategy) for o in self.outcomes]))


def run_seed(stats: TraceStats, seed: int, *, horizon: int = YEAR,
             durations: DurationModel | None = None, pricing: PricingConfig | None = None,
             risk: RiskConfig | None = None, arima: ArimaSettings | None = None,
             strategies=None, quarter_len: int = QUARTER) -> SeedOutcome:
    strategies = strategies or sorted(set(itertools.chain.from_iterable(ORDERING)))
    trace = synthesize_trace(stats, durations, horizon=horizon, seed=seed)
    quarterly = {}
    for name in strategies:
        res = simulate(trace, name, pricing, risk, seed=seed, arima=arima)
        quarterly[name] = [r.margin_psi for r in res.quarterly(quarter_len)]
    del trace
    return SeedOutcome(seed, quarterly)


def strategy_ordering(stats: TraceStats, seeds, **kwargs) -> OrderingReport:
    return OrderingReport([run_seed(stats, s, **kwargs) for s in seeds])
