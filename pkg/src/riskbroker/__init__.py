"""Trace-driven simulation of a cloud broker that resells reserved instances."""

from .accounting import Ledger, ProfitReport, profit_margin
from .broker import (
    COMPARED,
    AutoArima,
    BestCase,
    Broker,
    NoRiskAdjustment,
    PureOnDemand,
    PureReserved,
    RiskTaking,
    SimulationResult,
    make_strategy,
    simulate,
)
from .domain import DAY, HOUR, MONTH, QUARTER, YEAR, PricingConfig
from .risk import RiskConfig
from .trace import DATASET1, DATASET2, Trace, load_trace, resample_trace, synthesize_trace

__version__ = "0.1.0"
