"""Post-run statistics: normalisation, strategy comparison, correlations, forecast error."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.special import betainc

from .broker import LABELS, SimulationResult


class AnalysisError(ValueError):
    pass


class Method(Enum):
    PEARSON = "Pearson"
    SPEARMAN = "Spearman"
    KENDALL = "Kendall"


@dataclass(frozen=True)
class CorrelationResult:
    method: Method
    coefficient: float
    p_value: float
    n: int


def minmax_normalize(series) -> np.ndarray:
    """Affine map onto [0, 1]; a constant series maps to 0.5 everywhere."""
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise AnalysisError("cannot normalise an empty series")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.full(x.shape, 0.5)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def rank_average(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise AnalysisError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 3:
        raise AnalysisError("correlation needs at least 3 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise AnalysisError("correlation inputs must be finite")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise AnalysisError("coefficient undefined for a zero-variance series")
    return x, y


def _pearson(x, y):
    n = len(x)
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(dx @ dy / math.sqrt(float(dx @ dx) * float(dy @ dy)))
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0 or df == 0:
        p = 0.0 if abs(r) == 1.0 else 1.0
    else:
        t2 = r * r * df / (1.0 - r * r)
        # two-sided Student-t tail through the regularised incomplete beta
        p = float(betainc(0.5 * df, 0.5, df / (df + t2)))
    return r, min(1.0, max(0.0, p))


def _tie_sums(x):
    _, counts = np.unique(x, return_counts=True)
    t = counts[counts > 1].astype(np.float64)
    return (float(np.sum(t * (t - 1) / 2)), float(np.sum(t * (t - 1) * (2 * t + 5))),
            float(np.sum(t * (t - 1))), float(np.sum(t * (t - 1) * (t - 2))))


def _count_inversions(a) -> int:
    """Strict inversions of `a` by merge sort."""
    a = list(a)
    inv = 0
    width = 1
    n = len(a)
    while width < n:
        out = []
        for lo in range(0, n, 2 * width):
            left, right = a[lo:lo + width], a[lo + width:lo + 2 * width]
            i = j = 0
            while i < len(left) and j < len(right):
                if right[j] < left[i]:
                    inv += len(left) - i
                    out.append(right[j])
                    j += 1
                else:
                    out.append(left[i])
                    i += 1
            out.extend(left[i:])
            out.extend(right[j:])
        a = out
        width *= 2
    return inv


def kendall_counts(x, y) -> tuple[int, int]:
    """(concordant, discordant) pair counts in O(n log n); tied pairs count as neither."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    n0 = n * (n - 1) // 2
    order = np.lexsort((y, x))
    ys = y[order]
    xs = x[order]
    # pairs tied in x, and tied in both coordinates
    n1 = int(sum(c * (c - 1) // 2 for c in np.unique(x, return_counts=True)[1]))
    pairs = np.stack([xs, ys], axis=1)
    _, joint = np.unique(pairs, axis=0, return_counts=True)
    n3 = int(sum(c * (c - 1) // 2 for c in joint))
    n2 = int(sum(c * (c - 1) // 2 for c in np.unique(y, return_counts=True)[1]))
    # with x ascending and ties in x broken by ascending y, a strict inversion
    # of the y sequence is exactly a discordant pair
    discordant = _count_inversions(ys.tolist())
    concordant = n0 - n1 - n2 + n3 - discordant
    return concordant, discordant


def _kendall(x, y):
    n = len(x)
    nc, nd = kendall_counts(x, y)
    n0 = n * (n - 1) / 2
    t1, vt, t2a, t3a = _tie_sums(x)
    u1, vu, u2a, u3a = _tie_sums(y)
    tau = (nc - nd) / math.sqrt((n0 - t1) * (n0 - u1))
    var = ((n * (n - 1) * (2 * n + 5) - vt - vu) / 18.0
           + t2a * u2a / (2.0 * n * (n - 1)))
    if n > 2:
        var += t3a * u3a / (9.0 * n * (n - 1) * (n - 2))
    p = math.erfc(abs(nc - nd) / math.sqrt(var) / math.sqrt(2.0)) if var > 0 else 1.0
    return max(-1.0, min(1.0, tau)), min(1.0, max(0.0, p))


def correlate(x, y, method: Method | str = Method.PEARSON) -> CorrelationResult:
    """Coefficient and two-sided p-value.

    Spearman is Pearson on average ranks, using the same t approximation;
    Kendall is tau-b with the tie-corrected normal approximation.
    """
    method = Method(method) if not isinstance(method, Method) else method
    x, y = _check_pair(x, y)
    if method is Method.PEARSON:
        r, p = _pearson(x, y)
    elif method is Method.SPEARMAN:
        r, p = _pearson(rank_average(x), rank_average(y))
    else:
        r, p = _kendall(x, y)
    return CorrelationResult(method, r, p, len(x))


# --------------------------------------------------------------------------
# forecast error

def estimation_error_series(forecasts, actuals) -> np.ndarray:
    """Percentage over (+) or under (-) estimate, ``100 (f - a) / a``.

    Periods with a zero actual get ``+inf`` for a positive forecast and NaN
    for a zero forecast; :func:`error_summary` leaves both out.
    """
    f = np.asarray([getattr(v, "point_estimates", v) for v in forecasts], dtype=np.float64).ravel()
    a = np.asarray(actuals, dtype=np.float64).ravel()
    if f.shape != a.shape:
        raise AnalysisError(f"forecasts and actuals are not aligned: {f.shape} vs {a.shape}")
    out = np.empty_like(a)
    nz = a != 0
    out[nz] = 100.0 * (f[nz] - a[nz]) / a[nz]
    zero = ~nz
    out[zero & (f > 0)] = math.inf
    out[zero & (f < 0)] = -math.inf
    out[zero & (f == 0)] = math.nan
    return out


@dataclass(frozen=True)
class ErrorSummary:
    mean_pct: float
    mean_abs_pct: float
    n_used: int
    n_excluded: int


def error_summary(errors) -> ErrorSummary:
    e = np.asarray(errors, dtype=np.float64)
    ok = np.isfinite(e)
    used = e[ok]
    if used.size == 0:
        return ErrorSummary(math.nan, math.nan, 0, int((~ok).sum()))
    return ErrorSummary(float(used.mean()), float(np.abs(used).mean()), int(used.size),
                        int((~ok).sum()))


def arima_error_periods(result: SimulationResult, bin_len: int):
    """Per-refit-period (start, mean forecast, mean actual) for an Auto-ARIMA run.

    The actual is the mean of the series the model was fitted on (active
    requests by default) over the minutes the forecast covered.
    """
    rows = []
    active = result.active
    horizon = result.horizon
    for start, levels in result.forecasts:
        stop = min(horizon, start + len(levels) * bin_len)
        if stop <= start:
            continue
        n_bins = -(-(stop - start) // bin_len)
        rows.append((start, float(np.mean(levels[:n_bins])), float(np.mean(active[start:stop]))))
    return rows


# --------------------------------------------------------------------------
# strategy comparison

@dataclass(frozen=True)
class ComparisonRow:
    strategy: str
    highest: float
    lowest: float
    mean: float
    series: tuple


@dataclass
class ComparisonTable:
    rows: dict[str, ComparisonRow]
    difference: np.ndarray | None = None
    difference_pair: tuple[str, str] = ("best_case", "pure_reserved")
    n_quarters: int = 0
    notes: list[str] = field(default_factory=list)

    def mean(self, strategy: str) -> float:
        return self.rows[strategy].mean


def _clean(series) -> np.ndarray:
    return np.asarray([math.nan if v is None else float(v) for v in series], dtype=np.float64)


def compare_strategies(reports: Mapping[str, Sequence[float | None]],
                       difference_pair=("best_case", "pure_reserved")) -> ComparisonTable:
    """Highest, lowest and mean quarterly margin per strategy.

    Quarters with no revenue (margin undefined) are left out of the
    statistics. The ``difference`` series is the first strategy of
    `difference_pair` minus the second, quarter by quarter.
    """
    lengths = {len(s) for s in reports.values()}
    if len(lengths) > 1:
        raise AnalysisError(f"quarterly series differ in length: {sorted(lengths)}")
    rows = {}
    notes = []
    for name, series in reports.items():
        x = _clean(series)
        ok = x[np.isfinite(x)]
        if ok.size == 0:
            rows[name] = ComparisonRow(name, math.nan, math.nan, math.nan, tuple(x.tolist()))
            notes.append(f"{name}: no quarter with revenue")
            continue
        rows[name] = ComparisonRow(name, float(ok.max()), float(ok.min()), float(ok.mean()),
                                   tuple(x.tolist()))
    diff = None
    a, b = difference_pair
    if a in reports and b in reports:
        diff = _clean(reports[a]) - _clean(reports[b])
    return ComparisonTable(rows, diff, tuple(difference_pair), lengths.pop() if lengths else 0, notes)


def normalized_profit(reports: Mapping[str, Sequence[float | None]]) -> dict[str, np.ndarray]:
    """Quarterly margins min-max normalised jointly over all strategies.

    A shared scale keeps the strategies comparable within one plot.
    """
    cleaned = {k: _clean(v) for k, v in reports.items()}
    pool = np.concatenate([v[np.isfinite(v)] for v in cleaned.values()] or [np.zeros(0)])
    if pool.size == 0:
        return {k: np.full(len(v), math.nan) for k, v in cleaned.items()}
    lo, hi = float(pool.min()), float(pool.max())
    out = {}
    for k, v in cleaned.items():
        if hi == lo:
            out[k] = np.where(np.isfinite(v), 0.5, math.nan)
        else:
            out[k] = (v - lo) / (hi - lo)
    return out


def quarterly_drivers(result: SimulationResult, windows) -> dict[str, np.ndarray]:
    """Per-quarter explanatory series for the profit-difference correlations."""
    usage = []
    arrivals = []
    risk = []
    for lo, hi in windows:
        usage.append(float(np.sum(result.usage_closed[lo:hi])))
        arrivals.append(float(np.sum(result.arrivals[lo:hi])))
        r = result.risk[lo:hi]
        r = r[np.isfinite(r)]
        risk.append(float(r.mean()) if r.size else math.nan)
    return {"usage_time": np.asarray(usage), "arrivals": np.asarray(arrivals),
            "mean_risk": np.asarray(risk)}


def correlation_table(difference, drivers: Mapping[str, np.ndarray]):
    """Rows of (driver, method, CorrelationResult or None, note)."""
    rows = []
    for name, series in drivers.items():
        for method in Method:
            x = np.asarray(difference, dtype=np.float64)
            y = np.asarray(series, dtype=np.float64)
            ok = np.isfinite(x) & np.isfinite(y)
            try:
                rows.append((name, method, correlate(x[ok], y[ok], method), ""))
            except AnalysisError as exc:
                rows.append((name, method, None, str(exc)))
    return rows


# --------------------------------------------------------------------------
# CSV writers

def _f(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def write_comparison_csv(table: ComparisonTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "label", "highest", "lowest", "mean", "quarters"])
        for name, row in table.rows.items():
            w.writerow([name, LABELS.get(name, name), _f(row.highest), _f(row.lowest),
                        _f(row.mean), len(row.series)])


def write_normalized_csv(reports, path, difference=None) -> None:
    norm = normalized_profit(reports)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter", "strategy", "psi", "normalized"])
        for name, series in reports.items():
            for q, (psi, z) in enumerate(zip(_clean(series), norm[name])):
                w.writerow([q, name, _f(psi), _f(z)])
        if difference is not None:
            for q, d in enumerate(difference):
                w.writerow([q, "difference", _f(d), ""])


def write_correlations_csv(rows, path, x_name="profit_difference") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "method", "coefficient", "p_value", "n", "note"])
        for name, method, res, note in rows:
            if res is None:
                w.writerow([x_name, name, method.value, "", "", "", note])
            else:
                w.writerow([x_name, name, method.value, _f(res.coefficient), _f(res.p_value),
                            res.n, note])


def write_estimation_error_csv(periods, path) -> ErrorSummary:
    errors = estimation_error_series([f for _, f, _ in periods], [a for _, _, a in periods])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period_start", "forecast", "actual", "error_pct", "excluded"])
        for (start, f, a), e in zip(periods, errors):
            excluded = not math.isfinite(e)
            shown = "inf" if e == math.inf else ("-inf" if e == -math.inf else _f(e))
            w.writerow([start, _f(f), _f(a), shown, int(excluded)])
    return error_summary(errors)
