from __future__ import annotations

import numpy as np
import pytest

from riskbroker.broker import ARRIVALS_FIRST, TERMINATIONS_FIRST, NeedDecision, Replay, simulate
from riskbroker.domain import PricingConfig
from riskbroker.oracle import optimal_ledger, replay_cost

from conftest import make_trace, random_trace


def cost_of(res):
    t = res.ledger.totals()
    return t["reserved_cost"] + t["ondemand_cost"]


def brute_force_min_cost(trace, pricing, event_order=ARRIVALS_FIRST):
    """Minimum cost over every decision script, grown as the broker asks for decisions."""
    best = np.inf
    stack = [()]
    while stack:
        script = stack.pop()
        try:
            res = simulate(trace, Replay(script), pricing, engine="reference",
                           event_order=event_order)
        except NeedDecision:
            stack.append(script + (True,))
            stack.append(script + (False,))
            continue
        best = min(best, cost_of(res))
    return best


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("order", [ARRIVALS_FIRST, TERMINATIONS_FIRST])
def test_oracle_matches_full_enumeration(seed, order):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(4, 12))
    tr = random_trace(rng, int(rng.integers(1, 7)), int(rng.integers(L, 3 * L)), 2 * L)
    pr = PricingConfig(contract_len=L)
    opt = optimal_ledger(tr, pr, event_order=order)
    assert opt.cost == pytest.approx(brute_force_min_cost(tr, pr, order), abs=1e-9)
    assert replay_cost(tr, opt.decisions, pr, order) == pytest.approx(opt.cost, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_no_strategy_beats_the_optimum(seed):
    rng = np.random.default_rng(100 + seed)
    L = int(rng.integers(10, 40))
    tr = random_trace(rng, int(rng.integers(5, 16)), int(rng.integers(2 * L, 4 * L)), 2 * L)
    pr = PricingConfig(contract_len=L)
    opt = optimal_ledger(tr, pr)
    for name in ("best_case", "risk_taking", "pure_reserved", "pure_ondemand"):
        res = simulate(tr, name, pr, seed=seed, engine="reference")
        assert cost_of(res) >= opt.cost - 1e-9
        assert res.ledger.totals()["revenue"] == pytest.approx(opt.revenue)


def test_full_contract_reserved_is_optimal():
    pr = PricingConfig(contract_len=10)
    opt = optimal_ledger(make_trace([(0, 10)], horizon=10), pr)
    assert opt.decisions == (True,) and opt.cost == pytest.approx(4.0)
    assert opt.profit == pytest.approx(6.0)


def test_short_request_goes_on_demand():
    pr = PricingConfig(contract_len=10)
    opt = optimal_ledger(make_trace([(0, 3)], horizon=10), pr)
    assert opt.decisions == (False,) and opt.cost == pytest.approx(3.0)


def test_incumbent_bound_and_node_limit():
    rng = np.random.default_rng(5)
    tr = random_trace(rng, 12, 60, 40)
    pr = PricingConfig(contract_len=20)
    opt = optimal_ledger(tr, pr)
    seeded = optimal_ledger(tr, pr, incumbent=opt.cost)
    assert seeded.cost == pytest.approx(opt.cost)
    with pytest.raises(RuntimeError):
        optimal_ledger(tr, pr, node_limit=3)
