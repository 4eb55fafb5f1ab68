"""Compiled simulation kernel for long traces.

Reserved instances bought in the same minute share an expiry, so the pool is
kept as cohorts indexed by purchase minute: instance count, occupancy, and an
intrusive list of the requests ever bound there. A Fenwick tree over per-cohort
free capacity finds the oldest free contract in O(log H), which is what
lowest-id-first reuse means when ids ascend with creation time.

Request host codes: >= 0 cohort minute, -1 queued and never placed,
-2 on-demand, -3 terminated, -4 queued after its contract expired.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .accounting import Ledger
from .broker import (
    ARRIVALS_FIRST,
    AutoArima,
    BestCase,
    PureOnDemand,
    PureReserved,
    RiskTaking,
    SimulationResult,
    Strategy,
    StrategyError,
    arima_levels,
    break_even_minutes,
)
from .domain import PricingConfig
from .risk import RiskConfig
from .rng import DrawStream, substream
from .trace import Trace

# int64 scalar slots
RALIVE, BUSY, ODALIVE, FREE, SUMEXP, QH, QT, DP, NBOUGHT, NOD, NMIGR, NDEC, NEED = range(13)
N_SCALARS = 13

_STRATEGY_CODES = {RiskTaking: None, AutoArima: 2, PureReserved: 3, BestCase: 4, PureOnDemand: 5}


@njit(cache=True)
def _bit_add(tree, i, delta):
    i += 1
    n = len(tree)
    while i < n:
        tree[i] += delta
        i += i & (-i)


@njit(cache=True)
def _bit_first(tree, log_n):
    # smallest index whose prefix sum reaches 1
    pos = 0
    rem = 1
    step = 1 << log_n
    n = len(tree)
    while step:
        nxt = pos + step
        if nxt < n and tree[nxt] < rem:
            pos = nxt
            rem -= tree[nxt]
        step >>= 1
    return pos  # zero-based index = (pos + 1) - 1


@njit(cache=True)
def _bind_free(i, t, host, nxt, chead, cocc, tree, log_n, sc):
    p = _bit_first(tree, log_n)
    cocc[p] += 1
    _bit_add(tree, p, -1)
    sc[FREE] -= 1
    sc[BUSY] += 1
    host[i] = p
    nxt[i] = chead[p]
    chead[p] = i


@njit(cache=True)
def _chain_suffix(overflow, arr_ptr, end, t, L, rank, horizon, out):
    # out[k]: busy minutes of the rank-th new instance once it is free from t + k
    out[L] = 0
    for k in range(L - 1, -1, -1):
        s = t + k
        out[k] = out[k + 1]
        if s <= horizon:
            n = arr_ptr[s + 1] - arr_ptr[s]
            v = min(n, overflow[k])
            if rank <= v:
                fe = end[arr_ptr[s] + n - v + rank - 1]
                nxt = fe - t
                out[k] = min(fe, t + L) - s + (out[nxt] if nxt < L else 0)


@njit(cache=True)
def _window(p1, p2, t, w):
    n = min(w, t)
    if n == 0:
        return 0.0, 0.0
    s1 = float(p1[t] - p1[t - n])
    s2 = float(p2[t] - p2[t - n])
    mean = s1 / n
    var = s2 / n - mean * mean
    sd = math.sqrt(var) if var > 0 else 0.0
    return mean, sd


@njit(cache=True)
def _anomaly(current, mean, sd, k):
    if current < mean:
        return 0.0
    band = k * sd
    if band == 0:
        return 0.0 if current <= mean else 1.0
    if current > mean + band:
        return 1.0
    return min(1.0, (current - mean) / band)


@njit(cache=True)
def _kernel(t0, t1, horizon, start, end, host, nxt, arr_ptr, term_ptr, term_order,
            ccount, cocc, chead, tree, log_n, queue, qmid, und,
            a_p1, a_p2, c_p1, c_p2, conc, od_end,
            rev, rcost, ocost, cb, cum_rev, cum_cost,
            rcount, busy_s, od_s, risk_s, usage_closed, closed,
            sc, draws, levels, level_start,
            code, L, c_od, c_re, cb_frac, period, arrivals_first,
            w0, w1, w2, win, sd_k, adj_step, thr, geq, clamp, need_minutes, bin_len):
    window_buf = np.empty(0, dtype=np.int64)
    chain = np.empty(0, dtype=np.int64)
    resv = np.empty(0, dtype=np.bool_)
    if code == 4:
        window_buf = np.empty(L, dtype=np.int64)
        chain = np.empty(L + 1, dtype=np.int64)
        resv = np.empty(len(und), dtype=np.bool_)
    t = t0
    while t < t1:
        # draws needed this minute are bounded by queue + arrivals + evictions
        bound = sc[QT] - sc[QH] + (arr_ptr[t + 1] - arr_ptr[t])
        if t - L >= 0:
            bound += cocc[t - L]
        if (code == 0 or code == 1) and sc[DP] + bound > len(draws):
            sc[NEED] = bound
            return t
        # 1. expiry
        p = t - L
        if p >= 0 and ccount[p] > 0:
            n_ev = 0
            j = chead[p]
            while j >= 0:
                if host[j] == p:
                    und[n_ev] = j
                    n_ev += 1
                j = nxt[j]
            ev = np.sort(und[:n_ev])
            free_p = ccount[p] - cocc[p]
            if free_p:
                _bit_add(tree, p, -free_p)
                sc[FREE] -= free_p
            sc[BUSY] -= cocc[p]
            sc[RALIVE] -= ccount[p]
            sc[SUMEXP] -= ccount[p] * (p + L)
            ccount[p] = 0
            cocc[p] = 0
            chead[p] = -1
            if n_ev:
                if sc[QH] < n_ev:
                    raise RuntimeError("queue underflow")
                sc[QH] -= n_ev
                for k in range(n_ev):
                    host[ev[k]] = -4
                    queue[sc[QH] + k] = ev[k]
                sc[NMIGR] += n_ev
        # 2/3. arrivals and terminations
        for phase in range(2):
            do_arrivals = (phase == 0) == arrivals_first
            if do_arrivals:
                for i in range(arr_ptr[t], arr_ptr[t + 1]):
                    if sc[FREE] > 0:
                        _bind_free(i, t, host, nxt, chead, cocc, tree, log_n, sc)
                    else:
                        queue[sc[QT]] = i
                        sc[QT] += 1
            else:
                for k in range(term_ptr[t], term_ptr[t + 1]):
                    i = term_order[k]
                    h = host[i]
                    placed = True
                    if h >= 0:
                        cocc[h] -= 1
                        _bit_add(tree, h, 1)
                        sc[FREE] += 1
                        sc[BUSY] -= 1
                    elif h == -2:
                        sc[ODALIVE] -= 1
                    elif h == -1:
                        placed = False
                    host[i] = -3
                    if placed:
                        s = start[i]
                        usage = t - s
                        rev[t] += c_od * usage
                        usage_closed[t] += usage
                        closed[t] += 1
                        rho = cum_rev[t] - cum_rev[s]
                        if rho > 0 and cb_frac != 0:
                            omega = cum_cost[t] - cum_cost[s]
                            psi = 100.0 * (rho - omega) / rho
                            if psi > 0:
                                cb[t] += cb_frac * psi / 100.0 * (c_od * usage)
        if t >= horizon:
            return horizon + 1
        # 4. optimiser
        if t % period == 0:
            m = 0
            for k in range(sc[QH], sc[QT]):
                i = queue[k]
                if host[i] == -3:
                    continue
                if sc[FREE] > 0:
                    _bind_free(i, t, host, nxt, chead, cocc, tree, log_n, sc)
                else:
                    und[m] = i
                    m += 1
            sc[QH] = qmid
            sc[QT] = qmid
            if m:
                n_res = 0
                if code == 0 or code == 1:
                    mean, sd = _window(a_p1, a_p2, t, win)
                    f_a = _anomaly(a_p1[t + 1] - a_p1[t], mean, sd, sd_k)
                    mean, sd = _window(c_p1, c_p2, t, win)
                    f_c = _anomaly(sc[RALIVE], mean, sd, sd_k)
                    f_v = 0.0
                    if sc[RALIVE] > 0:
                        f_v = (sc[SUMEXP] - sc[RALIVE] * t) / (sc[RALIVE] * L)
                    r = w0 * f_a + w1 * f_c + w2 * f_v
                    if code == 0:
                        lo_r = max(0, t - period + 1)
                        lo_p = max(0, t - 2 * period + 1)
                        recent = 0.0
                        for u in range(lo_r, t + 1):
                            recent += rev[u]
                        previous = 0.0
                        for u in range(lo_p, lo_r):
                            previous += rev[u]
                        if recent > previous:
                            r += -adj_step
                        elif recent < previous:
                            r += adj_step
                    if clamp:
                        r = min(1.0, max(0.0, r))
                    if not (0.0 <= r <= 1.0):
                        raise ValueError("aggregated risk outside [0, 1]")
                    risk_s[t] = r
                elif code == 2:
                    if len(levels) == 0:
                        n_res = m
                    else:
                        kk = (t - level_start) // bin_len
                        if kk >= len(levels):
                            kk = len(levels) - 1
                        target = math.floor(levels[kk] + 0.5) - sc[RALIVE]
                        n_res = min(m, max(0, target))
                elif code == 3:
                    n_res = m
                elif code == 4:
                    # reservable overflow over the next contract length
                    cap = sc[RALIVE]
                    od = sc[ODALIVE]
                    for k in range(L):
                        tt = t + k
                        if k > 0:
                            pe = tt - L
                            if pe >= 0:
                                cap -= ccount[pe]
                            if tt <= horizon:
                                od -= od_end[tt]
                        d = conc[tt] if tt <= horizon else 0
                        window_buf[k] = d - od - cap
                    rank = 1
                    _chain_suffix(window_buf, arr_ptr, end, t, L, rank, horizon, chain)
                    for k in range(m):
                        e = end[und[k]]
                        busy = L if e >= t + L else (e - t) + chain[e - t]
                        resv[k] = busy >= need_minutes
                        if resv[k]:
                            rank += 1
                            if k + 1 < m:
                                _chain_suffix(window_buf, arr_ptr, end, t, L, rank, horizon, chain)
                sc[NDEC] += m
                for k in range(m):
                    i = und[k]
                    reserve = k < n_res
                    if code == 4:
                        reserve = resv[k]
                    elif code == 0 or code == 1:
                        u = draws[sc[DP]]
                        sc[DP] += 1
                        s_val = 1.0 if r == 0 else 1.0 - math.exp(-u / r)
                        reserve = s_val >= thr if geq else s_val <= thr
                    if reserve:
                        rcost[t] += c_re
                        ccount[t] += 1
                        cocc[t] += 1
                        sc[RALIVE] += 1
                        sc[BUSY] += 1
                        sc[SUMEXP] += t + L
                        sc[NBOUGHT] += 1
                        host[i] = t
                        nxt[i] = chead[t]
                        chead[t] = i
                    else:
                        host[i] = -2
                        sc[ODALIVE] += 1
                        sc[NOD] += 1
                        if end[i] <= horizon:
                            od_end[end[i]] += 1
        # 5. close the minute
        rcount[t] = sc[RALIVE]
        busy_s[t] = sc[BUSY]
        od_s[t] = sc[ODALIVE]
        ocost[t] += c_od * sc[ODALIVE]
        c_p1[t + 1] = c_p1[t] + sc[RALIVE]
        c_p2[t + 1] = c_p2[t] + sc[RALIVE] * sc[RALIVE]
        cum_rev[t + 1] = cum_rev[t] + rev[t]
        cum_cost[t + 1] = cum_cost[t] + rcost[t] + ocost[t]
        t += 1
    return t


@njit(cache=True)
def _bucket_by(keys, n_buckets):
    counts = np.zeros(n_buckets + 1, dtype=np.int64)
    for k in keys:
        counts[k + 1] += 1
    for b in range(n_buckets):
        counts[b + 1] += counts[b]
    order = np.empty(len(keys), dtype=np.int32)
    fill = counts[:-1].copy()
    for i in range(len(keys)):
        k = keys[i]
        order[fill[k]] = i
        fill[k] += 1
    return counts, order


def _strategy_code(strategy: Strategy) -> int:
    if isinstance(strategy, RiskTaking):
        return 0 if strategy.adjust else 1
    for cls, code in _STRATEGY_CODES.items():
        if code is not None and isinstance(strategy, cls):
            return code
    raise StrategyError(f"{strategy!r} has no compiled counterpart")


def run_fast(trace: Trace, strategy: Strategy, pricing: PricingConfig, risk: RiskConfig,
             *, seed: int = 0, optimiser_period: int = 1,
             event_order=ARRIVALS_FIRST) -> SimulationResult:
    """Compiled run with the same books as :class:`riskbroker.broker.Broker`."""
    code = _strategy_code(strategy)
    H = trace.horizon
    n = len(trace)
    L = int(pricing.contract_len)
    start, end = trace.start, trace.end

    arrivals = trace.arrival_counts()
    arr_ptr = np.zeros(H + 2, dtype=np.int64)
    np.cumsum(np.bincount(start, minlength=H + 1)[: H + 1], out=arr_ptr[1:])
    term_ptr, term_order = _bucket_by(end, H + 1)
    a_p1 = np.zeros(H + 2, dtype=np.int64)
    a_p2 = np.zeros(H + 2, dtype=np.int64)
    np.cumsum(arrivals, out=a_p1[1:H + 1])
    np.cumsum(arrivals * arrivals, out=a_p2[1:H + 1])
    a_p1[H + 1] = a_p1[H]
    a_p2[H + 1] = a_p2[H]

    host = np.full(n, -1, dtype=np.int32)
    nxt = np.full(n, -1, dtype=np.int32)
    ccount = np.zeros(H + 1, dtype=np.int64)
    cocc = np.zeros(H + 1, dtype=np.int64)
    chead = np.full(H + 1, -1, dtype=np.int32)
    tree = np.zeros(H + 2, dtype=np.int64)
    log_n = max(0, int(H + 1).bit_length())

    conc = trace.concurrency() if code == 4 else np.zeros(1, dtype=np.int64)
    max_conc = int(trace.concurrency().max()) if n else 0
    csum = np.r_[0, np.cumsum(arrivals)]
    P = min(int(optimiser_period), len(arrivals)) or 1
    max_arr = int(np.max(csum[P:] - csum[:-P])) if n else 0
    qmid = max_conc + max_arr + 1
    queue = np.zeros(qmid + max_arr + 1, dtype=np.int32)
    und = np.zeros(max(max_conc, max_arr) + 1, dtype=np.int32)
    od_end = np.zeros(H + 1, dtype=np.int64)

    ledger = Ledger(H + 1)
    rcount = np.zeros(H + 1, dtype=np.int64)
    busy_s = np.zeros(H + 1, dtype=np.int64)
    od_s = np.zeros(H + 1, dtype=np.int64)
    risk_s = np.full(H + 1, np.nan)
    usage_closed = np.zeros(H + 1, dtype=np.int64)
    closed = np.zeros(H + 1, dtype=np.int64)
    c_p1 = np.zeros(H + 2, dtype=np.int64)
    c_p2 = np.zeros(H + 2, dtype=np.int64)
    cum_rev = np.zeros(H + 2)
    cum_cost = np.zeros(H + 2)

    sc = np.zeros(N_SCALARS, dtype=np.int64)
    sc[QH] = sc[QT] = qmid
    stream = DrawStream(substream(seed, f"decisions/{strategy.name}"))
    no_levels = np.zeros(0)
    w = risk.weights
    win = risk.window_len(L)
    need_minutes = break_even_minutes(pricing)
    settings = strategy.settings if code == 2 else None
    bin_len = settings.bin_len if settings else 1
    forecasts = []
    levels, level_start = no_levels, 0

    t = 0
    while t <= H:
        t_stop = H + 1
        if settings is not None:
            if t and t % settings.refit_period == 0 and t < H:
                source = busy_s + od_s if settings.target == "active" else arrivals
                lv, _ = arima_levels(source, t, win, settings)
                if lv is not None:
                    levels, level_start = np.ascontiguousarray(lv, dtype=np.float64), t
                    forecasts.append((t, lv))
                else:
                    levels = no_levels
            t_stop = min(H + 1, (t // settings.refit_period + 1) * settings.refit_period)
        draws = stream.window(max(int(sc[NEED]), 1)) if code in (0, 1) else no_levels
        sc[DP] = 0
        sc[NEED] = 0
        t_new = _kernel(
            t, t_stop, H, start, end, host, nxt, arr_ptr, term_ptr, term_order,
            ccount, cocc, chead, tree, log_n, queue, qmid, und,
            a_p1, a_p2, c_p1, c_p2, conc, od_end,
            ledger.revenue, ledger.reserved_cost, ledger.ondemand_cost, ledger.cashback,
            cum_rev, cum_cost, rcount, busy_s, od_s, risk_s, usage_closed, closed,
            sc, draws, levels, level_start,
            code, L, float(pricing.ondemand_rate), float(pricing.reserved_cost),
            float(pricing.cashback_fraction), int(optimiser_period),
            tuple(event_order) == ARRIVALS_FIRST,
            w[0], w[1], w[2], win, float(risk.sd_multiplier), float(risk.adjustment_step),
            float(risk.decision_threshold), risk.decision_threshold_mode == "geq",
            bool(risk.clamp), need_minutes, bin_len,
        )
        if code in (0, 1):
            stream.consume(int(sc[DP]))
        if t_new == t and sc[NEED] == 0:
            raise RuntimeError("kernel made no progress")
        t = t_new

    ledger.pool_minutes[:] = rcount
    ledger.busy_minutes[:] = busy_s
    counters = {"reserved_bought": int(sc[NBOUGHT]), "ondemand_created": int(sc[NOD]),
                "migrations": int(sc[NMIGR]), "decisions": int(sc[NDEC])}
    return SimulationResult(strategy.name, H, pricing, ledger, arrivals_full(arrivals, H),
                            rcount, busy_s, od_s, risk_s, usage_closed, closed,
                            forecasts, counters)


def arrivals_full(arrivals: np.ndarray, horizon: int) -> np.ndarray:
    out = np.zeros(horizon + 1, dtype=np.int64)
    out[: len(arrivals)] = arrivals[: horizon + 1]
    return out
