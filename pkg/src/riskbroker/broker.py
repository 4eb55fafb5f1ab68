"""The broker state machine, its placement strategies, and the simulation driver.

Within one minute the broker processes, in order: reserved contracts that
expire (their occupants move to the front of the pending queue), then
arrivals and terminations (arrivals first by default), then one optimiser
pass that drains the queue. Minute ``horizon`` is a settlement step where
only expiries and terminations happen.

Two engines share these semantics. :class:`Broker` walks the domain objects
one request at a time and is the readable reference; ``riskbroker.engine``
is a compiled cohort-level kernel used for long traces. Equivalence tests
hold them to identical books.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import accounting
from .accounting import Ledger
from .domain import (
    DAY,
    HOUR,
    OnDemand,
    PendingQueue,
    PoolInvariantError,
    PricingConfig,
    RequestDB,
    Reserved,
    ResourcePool,
    UnknownRequestError,
    UserRequest,
)
from .forecast import fit_auto_arima, forecast_demand
from .risk import (
    Choice,
    RiskConfig,
    RiskVector,
    aggregate_risk,
    anomaly_risk,
    decide_many,
    pool_count_risk,
    revenue_adjustment,
    volume_ratio,
    window_stats,
)
from .rng import DrawStream, substream
from .trace import Trace

ARRIVALS_FIRST = ("arrivals", "terminations")
TERMINATIONS_FIRST = ("terminations", "arrivals")


class StrategyError(ValueError):
    pass


# --------------------------------------------------------------------------
# strategies

class Strategy:
    name = "strategy"
    code = -1
    needs_trace = False

    def decide(self, broker: "Broker", pending: list[str]) -> list[Choice]:
        raise NotImplementedError

    def before_minute(self, broker: "Broker", t: int) -> None:
        pass

    def __repr__(self):
        return f"{type(self).__name__}()"


class PureReserved(Strategy):
    name = "pure_reserved"
    code = 3

    def decide(self, broker, pending):
        return [Choice.RESERVED] * len(pending)


class PureOnDemand(Strategy):
    """Pass-through reseller; a test baseline outside the five compared systems."""

    name = "pure_ondemand"
    code = 5

    def decide(self, broker, pending):
        return [Choice.ON_DEMAND] * len(pending)


class RiskTaking(Strategy):
    """Risk-driven stocking; `adjust=False` drops the revenue-trend adjustment."""

    code = 0

    def __init__(self, adjust: bool = True):
        self.adjust = adjust
        self.name = "risk_taking" if adjust else "no_risk_adjustment"
        self.code = 0 if adjust else 1

    def __repr__(self):
        return f"RiskTaking(adjust={self.adjust})"

    def risk_vector(self, broker: "Broker") -> RiskVector:
        cfg, t = broker.risk, broker.clock
        L = broker.pricing.contract_len
        W = cfg.window_len(L)
        arrivals = broker.arrivals
        a_stats = window_stats(arrivals, t, W)
        f_anomaly = anomaly_risk(arrivals[t], a_stats, cfg.sd_multiplier)
        total, count = broker.pool.volume(t)
        c_stats = window_stats(broker.reserved_count, t, W)
        f_count = pool_count_risk(count, c_stats, cfg.sd_multiplier)
        f_volume = volume_ratio(total, count, L)
        adj = 0.0
        if self.adjust:
            P = broker.optimiser_period
            rev = broker.ledger.revenue
            recent = sum(rev[max(0, t - P + 1):t + 1].tolist())
            previous = sum(rev[max(0, t - 2 * P + 1):max(0, t - P + 1)].tolist())
            adj = revenue_adjustment(recent, previous, cfg.adjustment_step)
        return RiskVector(f_anomaly, f_count, f_volume, adj, cfg.weights)

    def decide(self, broker, pending):
        cfg = broker.risk
        r = aggregate_risk(self.risk_vector(broker), cfg.clamp)
        broker.risk_series[broker.clock] = r
        draws = broker.draws.take(len(pending))
        mask = decide_many(r, draws, cfg.decision_threshold, cfg.decision_threshold_mode)
        return [Choice.RESERVED if m else Choice.ON_DEMAND for m in mask]


def NoRiskAdjustment() -> RiskTaking:
    return RiskTaking(adjust=False)


@dataclass
class ArimaSettings:
    grid_max: tuple[int, int, int] = (3, 2, 3)
    refit_period: int = DAY
    target: str = "active"
    bin_len: int = HOUR

    @property
    def min_bins(self) -> int:
        """Fewest history bins a fit over the whole grid needs."""
        p, d, q = self.grid_max
        return 2 * (p + q + d + 1)

    def problems(self) -> list[str]:
        out = []
        if len(self.grid_max) != 3 or any(int(g) < 0 for g in self.grid_max):
            out.append("arima_grid_max must be three non-negative integers")
        if self.refit_period <= 0 or self.bin_len <= 0:
            out.append("arima periods must be positive")
        elif self.refit_period % self.bin_len:
            out.append("arima_refit_period_min must be a multiple of arima_bin_min")
        if self.target not in ("active", "arrivals"):
            out.append("arima_target must be 'active' or 'arrivals'")
        return out


def arima_levels(series: np.ndarray, t: int, window: int, settings: ArimaSettings):
    """Refit on binned history before minute `t`; per-bin levels for the next period.

    Returns ``(levels, model)``; levels is None while the history is too
    short to fit.
    """
    b = settings.bin_len
    lo = max(0, t - window)
    lo += (-lo) % b
    n_bins = (t - lo) // b
    if n_bins < settings.min_bins:
        return None, None
    hist = np.asarray(series[lo:lo + n_bins * b], dtype=np.float64).reshape(n_bins, b).mean(axis=1)
    model = fit_auto_arima(hist, settings.grid_max)
    fc = forecast_demand(model, hist, settings.refit_period // b, period=b)
    return fc.point_estimates, model


class AutoArima(Strategy):
    """Size the reserved pool to the forecast; overflow goes on-demand."""

    name = "auto_arima"
    code = 2

    def __init__(self, settings: ArimaSettings | None = None):
        self.settings = settings or ArimaSettings()
        self.levels: np.ndarray | None = None
        self.level_start = 0
        self.forecasts: list[tuple[int, np.ndarray]] = []

    def before_minute(self, broker, t):
        s = self.settings
        if t == 0 or t % s.refit_period or t >= broker.horizon:
            return
        window = broker.risk.window_len(broker.pricing.contract_len)
        source = broker.active if s.target == "active" else broker.arrivals
        levels, _ = arima_levels(source, t, window, s)
        self.levels = levels
        self.level_start = t
        if levels is not None:
            self.forecasts.append((t, levels))

    def current_level(self, t: int) -> float | None:
        if self.levels is None:
            return None
        k = (t - self.level_start) // self.settings.bin_len
        return float(self.levels[min(k, len(self.levels) - 1)])

    def decide(self, broker, pending):
        level = self.current_level(broker.clock)
        if level is None:
            return [Choice.RESERVED] * len(pending)
        count = broker.pool.volume(broker.clock)[1]
        n_res = min(len(pending), max(0, math.floor(level + 0.5) - count))
        return [Choice.RESERVED] * n_res + [Choice.ON_DEMAND] * (len(pending) - n_res)


def arima_placement(forecast_level: float, reserved_count: int, n_pending: int) -> tuple[int, int]:
    """(reserved, on-demand) split of the pending requests for a forecast level."""
    n_res = min(n_pending, max(0, math.floor(forecast_level + 0.5) - reserved_count))
    return n_res, n_pending - n_res


def arrival_index(trace: Trace) -> np.ndarray:
    """``ptr[s]:ptr[s+1]`` are the indices of the requests arriving in minute s."""
    ptr = np.zeros(trace.horizon + 2, dtype=np.int64)
    counts = np.bincount(trace.start, minlength=trace.horizon + 1)[: trace.horizon + 1]
    np.cumsum(counts, out=ptr[1:])
    return ptr


def chain_busy(overflow: np.ndarray, arr_ptr: np.ndarray, ends: np.ndarray, now: int,
               contract_len: int, rank: int, free_at: int, stop: int | None = None) -> int:
    """Busy minutes of the `rank`-th new instance bought at `now`, after its first tenant.

    At a future minute with n arrivals and reservable overflow v, the last
    min(n, v) arrivals are the ones older capacity cannot absorb, and the
    rank-th of them goes to the rank-th new instance if that one is free.
    The tenant stays until its own end or the contract's, and the chain
    continues from there. `stop` ends the walk once that many minutes are
    reached.
    """
    end = now + contract_len
    busy = 0
    s = free_at
    horizon = len(arr_ptr) - 2
    while s < end and (stop is None or busy < stop):
        if s <= horizon:
            n = int(arr_ptr[s + 1] - arr_ptr[s])
            v = min(n, int(overflow[s - now]))
            if rank <= v:
                fe = int(ends[arr_ptr[s] + n - v + rank - 1])
                busy += min(fe, end) - s
                s = fe
                continue
        s += 1
    return busy


def break_even_minutes(pricing: PricingConfig) -> int:
    return int(math.ceil(pricing.reserved_cost / pricing.ondemand_rate - 1e-9))


class BestCase(Strategy):
    """Greedy oracle with perfect knowledge of future demand.

    Pending requests are taken in queue order. Each gets a new reserved
    instance iff that instance, followed through its contract with the
    known future arrivals, would be busy for at least the break-even share
    of it. Reservable overflow at a future minute is concurrent demand less
    the requests already on on-demand (they never move) and the reserved
    capacity still under contract.
    """

    name = "best_case"
    code = 4
    needs_trace = True

    def overflow(self, broker) -> np.ndarray:
        conc = broker.concurrency
        if conc is None:
            raise StrategyError("best case needs the full trace")
        t, L = broker.clock, broker.pricing.contract_len
        window = np.zeros(L, dtype=np.int64)
        hi = min(len(conc), t + L)
        window[: hi - t] = conc[t:hi]
        minutes = np.arange(t, t + L)
        od_ends, res_ends = [], []
        for res in broker.pool.resources.values():
            if isinstance(res.scheme, OnDemand):
                if res.occupant is not None:
                    od_ends.append(broker.db.requests[res.occupant].end_time)
            elif res.scheme.usable(t):
                res_ends.append(res.scheme.expires_at)
        od = len(od_ends) - np.searchsorted(np.sort(od_ends), minutes, side="right")
        cap = len(res_ends) - np.searchsorted(np.sort(res_ends), minutes, side="right")
        return window - od - cap

    def decide(self, broker, pending):
        t, L = broker.clock, broker.pricing.contract_len
        ov = self.overflow(broker)
        need = break_even_minutes(broker.pricing)
        out = []
        rank = 1
        for q in pending:
            e = broker.db.requests[q].end_time
            busy = min(e, t + L) - t
            if busy < need:
                busy += chain_busy(ov, broker.arr_ptr, broker.ends, t, L, rank, e, need - busy)
            if busy >= need:
                out.append(Choice.RESERVED)
                rank += 1
            else:
                out.append(Choice.ON_DEMAND)
        return out


class NeedDecision(Exception):
    """Raised by :class:`Replay` when its script runs out."""


class Replay(Strategy):
    """Scripted decisions, one bool per request needing a decision (True = reserved)."""

    name = "replay"
    code = 6

    def __init__(self, script=()):
        self.script = list(script)
        self.used = 0

    def decide(self, broker, pending):
        out = []
        for _ in pending:
            if self.used >= len(self.script):
                raise NeedDecision(self.used)
            out.append(Choice.RESERVED if self.script[self.used] else Choice.ON_DEMAND)
            self.used += 1
        return out


STRATEGIES = {
    "risk_taking": lambda **kw: RiskTaking(adjust=True),
    "no_risk_adjustment": lambda **kw: RiskTaking(adjust=False),
    "auto_arima": lambda arima=None, **kw: AutoArima(arima),
    "pure_reserved": lambda **kw: PureReserved(),
    "best_case": lambda **kw: BestCase(),
    "pure_ondemand": lambda **kw: PureOnDemand(),
}
COMPARED = ("risk_taking", "no_risk_adjustment", "auto_arima", "pure_reserved", "best_case")
LABELS = {
    "risk_taking": "Risk-taking",
    "no_risk_adjustment": "No risk adjustment",
    "auto_arima": "Auto-ARIMA",
    "pure_reserved": "Pure reserved",
    "best_case": "Best case (greedy oracle)",
    "pure_ondemand": "Pure on-demand",
}


def make_strategy(name: str, **kwargs) -> Strategy:
    try:
        return STRATEGIES[name](**kwargs)
    except KeyError:
        raise StrategyError(f"unknown strategy {name!r}") from None


# --------------------------------------------------------------------------
# reference engine

@dataclass
class BrokerState:
    rqst_db: RequestDB
    rsrc_pool: ResourcePool
    rqst_srv_queue: PendingQueue
    ledger: Ledger
    clock: int = 0


@dataclass
class SimulationResult:
    strategy: str
    horizon: int
    pricing: PricingConfig
    ledger: Ledger
    arrivals: np.ndarray
    reserved_count: np.ndarray
    busy: np.ndarray
    ondemand: np.ndarray
    risk: np.ndarray
    usage_closed: np.ndarray
    closed: np.ndarray
    forecasts: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    @property
    def active(self) -> np.ndarray:
        return self.busy + self.ondemand

    def quarterly(self, quarter_len: int):
        return accounting.quarterly_series(self.ledger, self.horizon, quarter_len)


class Broker:
    def __init__(self, strategy: Strategy, pricing: PricingConfig | None = None,
                 risk: RiskConfig | None = None, *, horizon: int, seed: int = 0,
                 trace: Trace | None = None, optimiser_period: int = 1,
                 event_order=ARRIVALS_FIRST, itemize: bool = False):
        self.strategy = strategy
        self.pricing = pricing or PricingConfig()
        self.risk = risk or RiskConfig()
        self.horizon = int(horizon)
        self.optimiser_period = int(optimiser_period)
        self.event_order = tuple(event_order)
        n = self.horizon + 1
        self.state = BrokerState(RequestDB(), ResourcePool(), PendingQueue(), Ledger(n, itemize))
        self.arrivals = np.zeros(n, dtype=np.int64)
        self.reserved_count = np.zeros(n, dtype=np.int64)
        self.busy = np.zeros(n, dtype=np.int64)
        self.ondemand = np.zeros(n, dtype=np.int64)
        self.active = np.zeros(n, dtype=np.int64)
        self.risk_series = np.full(n, np.nan)
        self.usage_closed = np.zeros(n, dtype=np.int64)
        self.closed = np.zeros(n, dtype=np.int64)
        self.draws = DrawStream(substream(seed, f"decisions/{strategy.name}"))
        self.concurrency = trace.concurrency() if trace is not None else None
        self.arr_ptr = arrival_index(trace) if trace is not None else None
        self.ends = trace.end if trace is not None else None
        self.order: dict[str, int] = {}
        self.placed: set[str] = set()
        self.counters = {"reserved_bought": 0, "ondemand_created": 0, "migrations": 0,
                         "decisions": 0}

    # aliases onto the state tuple
    @property
    def db(self) -> RequestDB:
        return self.state.rqst_db

    @property
    def pool(self) -> ResourcePool:
        return self.state.rsrc_pool

    @property
    def queue(self) -> PendingQueue:
        return self.state.rqst_srv_queue

    @property
    def ledger(self) -> Ledger:
        return self.state.ledger

    @property
    def clock(self) -> int:
        return self.state.clock

    def _bind_free(self, request_id: str) -> bool:
        rid = self.pool.first_available(self.clock)
        if rid is None:
            return False
        self.pool.bind(rid, request_id, self.clock)
        self.placed.add(request_id)
        return True

    def handle_arrival(self, request: UserRequest) -> None:
        if request.start_time != self.clock:
            raise ValueError(f"request {request.request_id!r} arrives at "
                             f"{request.start_time}, clock is {self.clock}")
        self.db.log_creation(request, self.clock)
        self.order.setdefault(request.request_id, len(self.order))
        self.arrivals[self.clock] += 1
        if not self._bind_free(request.request_id):
            self.queue.push_back(request.request_id)

    def handle_termination(self, request_id: str) -> None:
        if not self.db.is_active(request_id):
            raise UnknownRequestError(request_id)
        t = self.clock
        request = self.db.requests[request_id]
        rate = self.pricing.ondemand_rate
        if request_id in self.queue:
            self.queue.remove(request_id)
        else:
            res = self.pool.release(request_id)
            if isinstance(res.scheme, OnDemand):
                self.ledger.add_ondemand_bill(t, rate * (t - res.scheme.start_time), request_id)
        self.db.log_termination(request_id, t)
        if request_id in self.placed:
            accounting.record_revenue(self.ledger, request, request.usage, rate)
            self.usage_closed[t] += request.usage
            self.closed[t] += 1
            accounting.cashback_due(self.ledger, request, self.pricing)

    def provision(self, choice: Choice) -> int:
        t = self.clock
        if choice is Choice.RESERVED:
            rid = self.pool.create(Reserved(t, self.pricing.contract_len))
            self.ledger.add_reserved_purchase(t, self.pricing.reserved_cost, f"r{rid}")
            self.counters["reserved_bought"] += 1
        elif choice is Choice.ON_DEMAND:
            rid = self.pool.create(OnDemand(t))
            self.counters["ondemand_created"] += 1
        else:
            raise StrategyError(f"cannot provision {choice!r}")
        return rid

    def run_optimiser(self) -> None:
        t = self.clock
        waiting = [q for q in self.queue.drain() if self.db.is_active(q)]
        undecided = [q for q in waiting if not self._bind_free(q)]
        if not undecided:
            return
        choices = self.strategy.decide(self, undecided)
        if len(choices) != len(undecided):
            raise StrategyError("strategy returned the wrong number of decisions")
        self.counters["decisions"] += len(undecided)
        for request_id, choice in zip(undecided, choices):
            rid = self.provision(choice)
            self.pool.bind(rid, request_id, t)
            self.placed.add(request_id)
        if len(self.queue):
            raise PoolInvariantError("pending queue not drained")

    def _expire(self) -> None:
        evicted = self.pool.expire(self.clock)
        if evicted:
            evicted.sort(key=self.order.__getitem__)
            self.counters["migrations"] += len(evicted)
            self.queue.push_front(evicted)

    def step(self, t: int, arrivals, terminations) -> None:
        """Process minute `t` given its arriving requests and terminating ids."""
        self.state.clock = t
        self.strategy.before_minute(self, t)
        self._expire()
        for phase in self.event_order:
            if phase == "arrivals":
                for req in arrivals:
                    self.handle_arrival(req)
            else:
                for rid in terminations:
                    self.handle_termination(rid)
        if t < self.horizon:
            if t % self.optimiser_period == 0:
                self.run_optimiser()
            self._close_minute(t)

    def _close_minute(self, t: int) -> None:
        _, count = self.pool.volume(t)
        busy = self.pool.busy_reserved(t)
        od = self.pool.ondemand_count()
        self.reserved_count[t] = count
        self.busy[t] = busy
        self.ondemand[t] = od
        self.active[t] = busy + od
        self.ledger.add_ondemand_usage(t, self.pricing.ondemand_rate * od)
        self.ledger.add_occupancy(t, count, busy)

    def run(self, trace: Trace) -> SimulationResult:
        if trace.horizon != self.horizon:
            raise ValueError("trace horizon does not match broker horizon")
        n = len(trace)
        by_end = np.argsort(trace.end, kind="stable")
        ends = trace.end[by_end]
        a = e = 0
        for t in range(self.horizon + 1):
            arr = []
            while a < n and trace.start[a] == t:
                arr.append(UserRequest(trace.request_id(a), int(trace.start[a]), int(trace.end[a])))
                a += 1
            term = []
            while e < n and ends[e] == t:
                term.append(trace.request_id(int(by_end[e])))
                e += 1
            self.step(t, arr, term)
        return self.result()

    def result(self) -> SimulationResult:
        forecasts = list(getattr(self.strategy, "forecasts", []))
        return SimulationResult(
            self.strategy.name, self.horizon, self.pricing, self.ledger,
            self.arrivals, self.reserved_count, self.busy, self.ondemand,
            self.risk_series, self.usage_closed, self.closed, forecasts, dict(self.counters),
        )


def simulate(trace: Trace, strategy: Strategy | str, pricing: PricingConfig | None = None,
             risk: RiskConfig | None = None, *, seed: int = 0, engine: str = "fast",
             optimiser_period: int = 1, event_order=ARRIVALS_FIRST,
             itemize: bool = False, arima: ArimaSettings | None = None) -> SimulationResult:
    """Run one strategy over `trace`.

    ``engine="reference"`` uses :class:`Broker`; ``"fast"`` the compiled kernel.
    """
    if isinstance(strategy, str):
        strategy = make_strategy(strategy, arima=arima)
    pricing = pricing or PricingConfig()
    risk = risk or RiskConfig()
    if engine == "reference":
        broker = Broker(strategy, pricing, risk, horizon=trace.horizon, seed=seed,
                        trace=trace if strategy.needs_trace else None,
                        optimiser_period=optimiser_period, event_order=event_order,
                        itemize=itemize)
        return broker.run(trace)
    if engine == "fast":
        from .engine import run_fast

        if isinstance(strategy, Replay):
            raise StrategyError("scripted strategies run on the reference engine only")
        return run_fast(trace, strategy, pricing, risk, seed=seed,
                        optimiser_period=optimiser_period, event_order=event_order)
    raise ValueError(f"unknown engine {engine!r}")
