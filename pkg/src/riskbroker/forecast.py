"""Auto-ARIMA by conditional sum of squares, for the prediction baseline.

Model on the d-times differenced series w:

    (w_t - mu) = sum_i phi_i (w_{t-i} - mu) + e_t + sum_j theta_j e_{t-j}

with mu estimated for d in {0, 1} and fixed at 0 for d = 2. Coefficients
minimise the conditional sum of squared one-step errors (pre-sample errors
set to zero) with a damped Gauss-Newton iteration; candidates are ranked by
AIC = n ln(RSS/n) + 2k over a common tail of the series.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit


class ForecastError(ValueError):
    pass


@dataclass(frozen=True)
class ArimaModel:
    order: tuple[int, int, int]
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    fit_aic: float
    rss: float = 0.0
    converged: bool = True

    @property
    def n_params(self) -> int:
        p, d, q = self.order
        return p + q + (1 if d < 2 else 0)


@dataclass(frozen=True)
class Forecast:
    horizon: int
    period: int
    point_estimates: np.ndarray


def difference(y: np.ndarray, d: int) -> np.ndarray:
    w = np.asarray(y, dtype=np.float64)
    for _ in range(d):
        w = np.diff(w)
    return w


@njit(cache=True)
def _residuals(w, mu, phi, theta):
    """One-step CSS errors; pre-sample errors are zero."""
    p, q = len(phi), len(theta)
    n = len(w)
    e = np.zeros(n)
    for t in range(p, n):
        v = w[t] - mu
        for i in range(p):
            v -= phi[i] * (w[t - 1 - i] - mu)
        for j in range(min(q, t)):
            v -= theta[j] * e[t - 1 - j]
        e[t] = v
    return e


@njit(cache=True)
def _jacobian(w, mu, phi, theta, e, with_mu):
    # d e / d param, each column passed once through the MA filter.
    p, q = len(phi), len(theta)
    n = len(w)
    k = p + q + (1 if with_mu else 0)
    J = np.zeros((n, k))
    c_mu = -(1.0 - phi.sum())
    for t in range(n):
        col = 0
        if with_mu:
            J[t, 0] = c_mu if t >= p else 0.0
            col = 1
        for i in range(p):
            J[t, col + i] = -(w[t - 1 - i] - mu) if t >= p else 0.0
        for j in range(q):
            J[t, col + p + j] = -e[t - 1 - j] if t > j else 0.0
        for j in range(min(q, t)):
            for c in range(k):
                J[t, c] -= theta[j] * J[t - 1 - j, c]
    return J


@njit(cache=True)
def _stable(coeffs) -> bool:
    """All roots of 1 - c_1 z - ... - c_k z^k lie outside the unit circle.

    Step-down recursion: the polynomial is stable iff every reflection
    coefficient has modulus below one.
    """
    a = coeffs.astype(np.float64).copy()
    if not np.any(a != 0.0):
        return True
    for m in range(len(a), 0, -1):
        kappa = a[m - 1]
        if not abs(kappa) < 1.0 - 1e-6:
            return False
        if m > 1:
            den = 1.0 - kappa * kappa
            b = np.empty(m - 1)
            for i in range(m - 1):
                b[i] = (a[i] + kappa * a[m - 2 - i]) / den
            a = b
    return True


@njit(cache=True)
def _initial(w, p, q, with_mu):
    mu = w.mean() if with_mu else 0.0
    x = w - mu
    phi = np.zeros(p)
    theta = np.zeros(q)
    if p and len(x) > 2 * p + 1:
        X = np.empty((len(x) - p, p))
        for i in range(1, p + 1):
            X[:, i - 1] = x[p - i:len(x) - i]
        if np.all(np.isfinite(X)):
            sol = np.linalg.lstsq(X, x[p:])[0]
            if _stable(sol):
                phi = sol
    return mu, phi, theta


@njit(cache=True)
def _css(w, p, q, with_mu, max_iter=30, tol=1e-10):
    mu, phi, theta = _initial(w, p, q, with_mu)
    e = _residuals(w, mu, phi, theta)
    rss = e @ e
    k = p + q + (1 if with_mu else 0)
    if k == 0:
        return mu, phi, theta, e, rss, True
    converged = False
    off = 1 if with_mu else 0
    for _ in range(max_iter):
        J = _jacobian(w, mu, phi, theta, e, with_mu)
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(e))):
            break
        step = np.linalg.lstsq(J, -e)[0]
        if not np.all(np.isfinite(step)):
            break
        base = np.empty(k)
        if with_mu:
            base[0] = mu
        base[off:off + p] = phi
        base[off + p:] = theta
        lam = 1.0
        improved = False
        mu_n, phi_n, theta_n, e_n, rss_n = mu, phi, theta, e, rss
        while lam > 1e-4:
            beta = base + lam * step
            mu_n = beta[0] if with_mu else 0.0
            phi_n = beta[off:off + p].copy()
            theta_n = beta[off + p:].copy()
            if _stable(phi_n) and _stable(-theta_n):
                e_n = _residuals(w, mu_n, phi_n, theta_n)
                rss_n = e_n @ e_n
                if np.isfinite(rss_n) and rss_n <= rss:
                    improved = True
                    break
            lam *= 0.5
        if not improved:
            converged = True
            break
        gain = rss - rss_n
        mu, phi, theta, e, rss = mu_n, phi_n, theta_n, e_n, rss_n
        if gain <= tol * max(rss, 1e-300) or rss == 0:
            converged = True
            break
    return mu, phi, theta, e, rss, converged


def fit_arima(series, order, tail: int | None = None, scale: float | None = None) -> ArimaModel | None:
    """Fit one (p, d, q) candidate; None when the fit is singular or diverges.

    `tail` restricts the scored residuals to the last `tail` points so that
    candidates with different lags compete on the same observations.
    """
    p, d, q = order
    y = np.asarray(series, dtype=np.float64)
    w = difference(y, d)
    if len(w) <= p + q + 1:
        return None
    with_mu = d < 2
    try:
        mu, phi, theta, e, _, converged = _css(w, p, q, with_mu)
    except (np.linalg.LinAlgError, ValueError):
        return None
    scored = e[p:] if tail is None else e[-tail:]
    if not np.all(np.isfinite(scored)):
        return None
    n = len(scored)
    rss = float(scored @ scored)
    if scale is None:
        scale = max(float(np.std(y)), float(np.abs(y).mean()), 1.0)
    sigma2 = max(rss / n, (1e-9 * scale) ** 2)
    k = p + q + int(with_mu)
    aic = n * math.log(sigma2) + 2 * k
    return ArimaModel((p, d, q), np.asarray(phi, float), np.asarray(theta, float),
                      float(mu), float(aic), rss, converged)


def fit_auto_arima(series, grid_max=(3, 2, 3)) -> ArimaModel:
    """AIC-minimal model over the full (p, d, q) grid.

    Ties resolve to the lexicographically smallest order. If every candidate
    fails, a (0, 1, 0) random walk is returned.
    """
    pm, dm, qm = grid_max
    y = np.asarray(series, dtype=np.float64)
    need = 2 * (pm + qm + dm + 1)
    if len(y) < need:
        raise ForecastError(f"series of length {len(y)} is too short; need {need}")
    tail = len(y) - dm - pm
    scale = max(float(np.std(y)), float(np.abs(y).mean()), 1.0)
    best = None
    for order in itertools.product(range(pm + 1), range(dm + 1), range(qm + 1)):
        model = fit_arima(y, order, tail=tail, scale=scale)
        if model is None:
            continue
        if best is None or model.fit_aic < best.fit_aic - 1e-9 * abs(best.fit_aic):
            best = model
    if best is None:
        best = ArimaModel((0, 1, 0), np.zeros(0), np.zeros(0), 0.0, math.inf, converged=False)
    return best


def forecast_demand(model: ArimaModel, history, horizon: int, period: int = 1) -> Forecast:
    """Recursive point forecasts for `horizon` steps, clamped at zero."""
    p, d, q = model.order
    y = np.asarray(history, dtype=np.float64)
    steps = max(0, int(horizon))
    if len(y) == 0:
        return Forecast(steps, period, np.zeros(steps))
    w = difference(y, d)
    mu = model.intercept
    phi, theta = model.ar, model.ma
    e = _residuals(w, mu, np.asarray(phi, float), np.asarray(theta, float)) if len(w) > p else np.zeros(len(w))
    xs = list(w - mu)
    es = list(e)
    out_w = []
    for _ in range(steps):
        val = 0.0
        for i in range(1, p + 1):
            val += phi[i - 1] * (xs[-i] if len(xs) >= i else 0.0)
        for j in range(1, q + 1):
            val += theta[j - 1] * (es[-j] if len(es) >= j else 0.0)
        xs.append(val)
        es.append(0.0)
        out_w.append(val + mu)
    fc = np.asarray(out_w)
    # Undo the differencing one level at a time.
    levels = [y]
    for _ in range(d):
        levels.append(np.diff(levels[-1]))
    for k in range(d, 0, -1):
        fc = levels[k - 1][-1] + np.cumsum(fc)
    return Forecast(steps, period, np.maximum(fc, 0.0))
