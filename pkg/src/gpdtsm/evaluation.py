"""Forecast evaluation: out-of-sample R², DM/CW tests, power-utility allocation and CER,
adjusted-R² batteries and the spanned/hidden split of the risk-premium component."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from .errors import DataError, ValidationError

WEIGHT_BOUND = 10.0


def r2_os(model_errors, bench_errors) -> float:
    """``1 - SSE_model / SSE_bench``; NaN with a warning when the benchmark SSE is zero."""
    e = np.asarray(model_errors, dtype=float)
    b = np.asarray(bench_errors, dtype=float)
    if e.shape != b.shape or e.size == 0:
        raise ValidationError("forecast and benchmark errors must be aligned and non-empty")
    sse_b = float(b @ b)
    if sse_b == 0.0:
        warnings.warn("benchmark SSE is zero; R2_os undefined", RuntimeWarning, stacklevel=2)
        return math.nan
    return 1.0 - float(e @ e) / sse_b


def nw_lags(T: int) -> int:
    """Automatic Newey-West bandwidth ``floor(4 (T/100)^(2/9))``."""
    return int(math.floor(4.0 * (T / 100.0) ** (2.0 / 9.0)))


def newey_west_se(x, lags: int) -> float:
    """HAC standard error of the sample mean with Bartlett weights."""
    x = np.asarray(x, dtype=float)
    T = x.size
    u = x - x.mean()
    lrv = float(u @ u) / T
    for k in range(1, lags + 1):
        lrv += 2.0 * (1.0 - k / (lags + 1.0)) * float(u[k:] @ u[:-k]) / T
    return math.sqrt(max(lrv, 0.0) / T)


def cw_differential(model_errors, bench_errors, model_forecasts, bench_forecasts) -> np.ndarray:
    """Clark-West adjusted loss differential ``e_b^2 - e_m^2 + (f_b - f_m)^2``."""
    e = np.asarray(model_errors, dtype=float)
    b = np.asarray(bench_errors, dtype=float)
    f = np.asarray(model_forecasts, dtype=float) - np.asarray(bench_forecasts, dtype=float)
    return b * b - e * e + f * f


def dm_cw_test(d, lags: int | None = None):
    """One-sided test that the mean differential is positive.

    Returns ``(stat, p)`` with ``p`` from the standard normal upper tail.
    An identically zero series gives ``(0, 0.5)``; a constant non-zero series
    has no sampling variance and gives ``(nan, nan)`` with a warning.
    """
    d = np.asarray(d, dtype=float)
    if d.size < 10:
        raise ValidationError(f"DM/CW test needs at least 10 observations, got {d.size}")
    lags = nw_lags(d.size) if lags is None else int(lags)
    if np.all(d == 0):
        return 0.0, 0.5
    se = newey_west_se(d, lags)
    if se == 0.0:
        warnings.warn("loss differential has zero variance; DM/CW test degenerate", RuntimeWarning, stacklevel=2)
        return math.nan, math.nan
    stat = float(d.mean() / se)
    return stat, float(norm.sf(stat))


def stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""


def crra(wealth, gamma: float):
    wealth = np.asarray(wealth, dtype=float)
    if gamma == 1.0:
        return np.log(wealth)
    return wealth ** (1.0 - gamma) / (1.0 - gamma)


def portfolio_gross_return(w, rx, rf):
    """Gross one-period return of ``w`` in the risky bond and ``1 - w`` in the riskless one."""
    return np.exp(rf) * (1.0 + w * np.expm1(rx))


def feasible_interval(rx, bound: float = WEIGHT_BOUND):
    """Weights in ``[-bound, bound]`` keeping wealth positive for every draw (open at binding ends)."""
    x = np.expm1(np.asarray(rx, dtype=float))
    lo, hi = -bound, bound
    pos, neg = x[x > 0], x[x < 0]
    if pos.size:
        lo = max(lo, float(np.max(-1.0 / pos)))
    if neg.size:
        hi = min(hi, float(np.min(-1.0 / neg)))
    return lo, hi


def optimal_weight(rx_draws, weights=None, gamma: float = 3.0, rf: float = 0.0, bound: float = WEIGHT_BOUND,
                   xatol: float = 1e-10) -> float:
    """Expected-utility-maximizing risky weight under the particle predictive.

    Bounded Brent search (golden section with parabolic steps) over the
    feasible part of ``[-bound, bound]``, polished by Newton steps on the
    first-order condition when the optimum is interior. If every draw is zero the investor
    is indifferent and ``0`` is returned.
    """
    if gamma <= 1.0:
        raise ValidationError(f"risk aversion must exceed 1, got {gamma}")
    rx = np.asarray(rx_draws, dtype=float)
    if not np.all(np.isfinite(rx)):
        raise DataError("excess-return draws must be finite")
    w_ = np.full(rx.size, 1.0 / rx.size) if weights is None else np.asarray(weights, dtype=float)
    w_ = w_ / w_.sum()
    if np.all(np.expm1(rx) == 0):
        return 0.0
    lo, hi = feasible_interval(rx, bound)
    # stay strictly inside the region where every wealth draw is positive
    pad = 1e-9 * max(1.0, hi - lo)
    lo_in, hi_in = lo + (pad if lo > -bound else 0.0), hi - (pad if hi < bound else 0.0)

    def neg_eu(w):
        wealth = portfolio_gross_return(w, rx, rf)
        if np.any(wealth <= 0):
            return np.inf
        return -float(w_ @ crra(wealth, gamma))

    res = minimize_scalar(neg_eu, bounds=(lo_in, hi_in), method="bounded", options={"xatol": xatol})
    w = float(res.x)
    # the utility surface is flat to rounding near the optimum; Newton steps on the
    # first-order condition pin the interior optimum down to machine precision
    x = np.expm1(rx)
    for _ in range(8):
        base = 1.0 + w * x
        if np.any(base <= 0):
            break
        g = float(w_ @ (x * base**-gamma))
        h = -gamma * float(w_ @ (x * x * base ** (-gamma - 1.0)))
        if h == 0.0 or not np.isfinite(g / h):
            break
        step = g / h
        if not lo_in < w - step < hi_in:
            break
        w -= step
        if abs(step) <= 1e-15 * max(1.0, abs(w)):
            break
    return w


def cer_relative(model_returns, bench_returns, gamma: float = 3.0) -> float:
    """Certainty-equivalent gain of the model strategy over the benchmark, annualized percent.

    ``delta`` solves ``mean U(R_bench e^delta) = mean U(R_model)`` for gross
    monthly returns ``R``; the result is ``1200 * delta``.
    """
    Rm = 1.0 + np.asarray(model_returns, dtype=float)
    Rb = 1.0 + np.asarray(bench_returns, dtype=float)
    if Rm.shape != Rb.shape:
        raise ValidationError("model and benchmark ledgers must cover the same dates")
    bad = np.flatnonzero((Rm <= 0) | (Rb <= 0))
    if bad.size:
        raise DataError(f"nonpositive realized wealth at positions {bad.tolist()}")
    if gamma == 1.0:
        delta = float(np.mean(np.log(Rm)) - np.mean(np.log(Rb)))
    else:
        # U(R e^d) = e^{d(1-gamma)} U(R) closes the equation
        um = np.mean(Rm ** (1.0 - gamma))
        ub = np.mean(Rb ** (1.0 - gamma))
        delta = float((np.log(um) - np.log(ub)) / (1.0 - gamma))
    return 1200.0 * delta


def _design(X, T):
    X = np.zeros((T, 0)) if X is None else np.asarray(X, dtype=float).reshape(T, -1)
    return np.column_stack([np.ones(T), X])


def ols(y, X):
    """OLS with an intercept column prepended; returns ``(coef, fitted, rank)``."""
    y = np.asarray(y, dtype=float)
    D = _design(X, y.size)
    coef, _, rank, _ = np.linalg.lstsq(D, y, rcond=None)
    return coef, D @ coef, int(rank)


def adjusted_r2(y, X) -> float:
    """``1 - (1 - R^2)(T - 1)/(T - p - 1)`` with an intercept; ``p`` excludes it.

    A constant ``y`` has no variance to explain and returns 0 with a warning.
    """
    y = np.asarray(y, dtype=float)
    T = y.size
    p = _design(X, T).shape[1] - 1
    if T <= p + 1:
        raise ValidationError(f"adjusted R2 undefined with T={T} and p={p}")
    _, fitted, _ = ols(y, X)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        warnings.warn("dependent variable is constant; adjusted R2 reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    sse = float(np.sum((y - fitted) ** 2))
    r2 = 1.0 - sse / sst
    return 1.0 - (1.0 - r2) * (T - 1) / (T - p - 1)


def delta_adjusted_r2(y, X_base, X_extra) -> float:
    T = np.asarray(y).size
    base = np.zeros((T, 0)) if X_base is None else np.asarray(X_base, dtype=float).reshape(T, -1)
    extra = np.asarray(X_extra, dtype=float).reshape(T, -1)
    return adjusted_r2(y, np.column_stack([base, extra])) - adjusted_r2(y, base)


@dataclass
class RpDecomposition:
    """Per-equation split of the posterior-mean GP component into PC-spanned and hidden parts."""

    v_hat: np.ndarray  # (T, 3)
    spanned: np.ndarray
    hidden: np.ndarray
    intercept: np.ndarray  # (3,)
    slopes: np.ndarray  # (3, 3), row j = b_j'
    adj_r2: dict  # {"v": (3,), "spanned": (3,), "hidden": (3,)} on the lagged macro
    flags: list = field(default_factory=list)


def rp_decompose(v_hat, P, macro_lag) -> RpDecomposition:
    """Regress each column of ``v_hat`` on ``[1, P_t]`` and score each part on ``M_{t-1}``.

    ``v_hat[s]`` is the component entering ``P_{s+1}``; the caller aligns
    ``P`` and ``macro_lag`` to the same rows.
    """
    V = np.asarray(v_hat, dtype=float)
    P = np.asarray(P, dtype=float)
    M = np.asarray(macro_lag, dtype=float)
    T = V.shape[0]
    if P.shape[0] != T or M.shape[0] != T:
        raise ValidationError("v_hat, P and macro rows must align")
    spanned = np.empty_like(V)
    coefs = np.empty((V.shape[1], P.shape[1] + 1))
    flags = []
    for j in range(V.shape[1]):
        coef, fitted, rank = ols(V[:, j], P)
        if rank < P.shape[1] + 1:
            warnings.warn("PC regressors are collinear; using the minimum-norm solution", RuntimeWarning,
                          stacklevel=2)
            flags.append(f"collinear_pcs_eq{j}")
        coefs[j] = coef
        spanned[:, j] = fitted
    hidden = V - spanned
    scores = {"v": [], "spanned": [], "hidden": []}
    for name, series in (("v", V), ("spanned", spanned), ("hidden", hidden)):
        for j in range(V.shape[1]):
            col = series[:, j]
            if np.allclose(col, col.mean(), rtol=0.0, atol=1e-14 * max(1.0, float(np.max(np.abs(V))))):
                scores[name].append(0.0)
                flags.append(f"{name}_constant_eq{j}")
            else:
                scores[name].append(adjusted_r2(col, M))
    return RpDecomposition(V, spanned, hidden, coefs[:, 0], coefs[:, 1:],
                           {k: np.array(v) for k, v in scores.items()}, flags)


def eh_forecasts(rx_history, first: int) -> np.ndarray:
    """Expanding-window mean forecasts.

    Entry ``k`` forecasts ``rx_history[first + k]`` from ``rx_history[:first + k]``
    (rows are dates, columns maturities).
    """
    rx = np.asarray(rx_history, dtype=float)
    if first < 1:
        raise ValidationError("the historical-mean benchmark needs at least one past return")
    csum = np.cumsum(rx, axis=0)
    counts = np.arange(1, rx.shape[0] + 1)[:, None]
    means = csum / counts
    return means[first - 1 : rx.shape[0] - 1]
