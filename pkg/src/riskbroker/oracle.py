"""Exhaustive search over placement decisions for tiny instances.

Every request is served regardless of strategy, so revenue is fixed and the
most profitable ledger is the cheapest one. The search walks the decision
tree of a compact re-implementation of the broker's minute loop, pruning
with two exact rules:

* cost only grows: a reserved purchase is sunk at once and an on-demand
  placement commits its whole remaining bill, so committed cost is a lower
  bound on the final cost;
* after an optimiser pass the queue is empty and on-demand requests never
  touch the pool again, so the future depends only on the minute and the
  reserved pool's (expiry, occupant) pairs. Reaching such a state a second
  time at no lower cost cannot help.
"""

from __future__ import annotations

from dataclasses import dataclass

from .broker import ARRIVALS_FIRST, Replay, simulate
from .domain import PricingConfig
from .trace import Trace


@dataclass(frozen=True)
class OracleResult:
    cost: float
    revenue: float
    decisions: tuple[bool, ...]
    nodes: int

    @property
    def profit(self) -> float:
        return self.revenue - self.cost


class _Search:
    def __init__(self, trace: Trace, pricing: PricingConfig, event_order, node_limit):
        self.H = trace.horizon
        self.L = int(pricing.contract_len)
        self.c = float(pricing.ondemand_rate)
        self.c_re = float(pricing.reserved_cost)
        self.start = trace.start.tolist()
        self.end = trace.end.tolist()
        self.arrive = [[] for _ in range(self.H + 1)]
        self.leave = [[] for _ in range(self.H + 1)]
        for i, (s, e) in enumerate(zip(self.start, self.end)):
            self.arrive[s].append(i)
            self.leave[e].append(i)
        self.arrivals_first = tuple(event_order) == ARRIVALS_FIRST
        self.best = float("inf")
        self.best_path: tuple[bool, ...] = ()
        self.seen: dict = {}
        self.nodes = 0
        self.node_limit = node_limit

    # pool: list of [expires_at, occupant or -1] in creation (= id) order
    def _bind_free(self, pool, t, i):
        for inst in pool:
            if inst[1] < 0 and inst[0] > t:
                inst[1] = i
                return True
        return False

    def run(self, t, pool, cost, path):
        """Simulate from the start of minute `t` with an empty queue."""
        queue: list[int] = []
        while t <= self.H:
            evicted = sorted(inst[1] for inst in pool if inst[0] == t and inst[1] >= 0)
            pool = [inst for inst in pool if inst[0] != t]
            queue = evicted + queue
            phases = ("a", "t") if self.arrivals_first else ("t", "a")
            for ph in phases:
                if ph == "a":
                    for i in self.arrive[t]:
                        if not self._bind_free(pool, t, i):
                            queue.append(i)
                else:
                    for i in self.leave[t]:
                        if i in queue:
                            queue.remove(i)
                            continue
                        for inst in pool:
                            if inst[1] == i:
                                inst[1] = -1
                                break
            if t >= self.H:
                break
            undecided = [i for i in queue if not self._bind_free(pool, t, i)]
            queue = []
            if undecided:
                self._branch(t, pool, cost, path, undecided, 0)
                return
            t += 1
        self.nodes += 1
        if cost < self.best:
            self.best = cost
            self.best_path = tuple(path)

    def _branch(self, t, pool, cost, path, undecided, k):
        self.nodes += 1
        if self.node_limit and self.nodes > self.node_limit:
            raise RuntimeError("oracle node limit exceeded")
        if cost >= self.best:
            return
        if k == len(undecided):
            key = (t, tuple(sorted((inst[0], inst[1]) for inst in pool)))
            prev = self.seen.get(key)
            if prev is not None and prev <= cost:
                return
            self.seen[key] = cost
            self.run(t + 1, pool, cost, path)
            return
        i = undecided[k]
        # reserved branch first: it tends to find cheap incumbents early
        pool_r = [list(inst) for inst in pool] + [[t + self.L, i]]
        self._branch(t, pool_r, cost + self.c_re, path + [True], undecided, k + 1)
        self._branch(t, pool, cost + self.c * (self.end[i] - t), path + [False], undecided, k + 1)


def optimal_ledger(trace: Trace, pricing: PricingConfig | None = None, *,
                   event_order=ARRIVALS_FIRST, node_limit: int = 0,
                   incumbent: float | None = None) -> OracleResult:
    """Cheapest achievable cost over every reserved/on-demand decision sequence.

    The optimiser runs every minute. `incumbent` seeds the bound with a
    known achievable cost (such as a strategy's); the returned decisions are
    then only populated if the search finds something at least as cheap.
    """
    pricing = pricing or PricingConfig()
    s = _Search(trace, pricing, event_order, node_limit)
    if incumbent is not None:
        s.best = float(incumbent) * (1 + 1e-12) + 1e-12
    s.run(0, [], 0.0, [])
    revenue = float(pricing.ondemand_rate) * float(sum(e - b for b, e in zip(s.start, s.end)))
    return OracleResult(s.best, revenue, s.best_path, s.nodes)


def replay_cost(trace: Trace, decisions, pricing: PricingConfig | None = None,
                event_order=ARRIVALS_FIRST) -> float:
    """Total cost of a decision sequence on the reference broker."""
    res = simulate(trace, Replay(decisions), pricing, seed=0, engine="reference",
                   event_order=event_order)
    t = res.ledger.totals()
    return t["reserved_cost"] + t["ondemand_cost"]
