"""One-step predictive draws of the PCs and of bond excess returns.

Yields and returns are monthly decimals; maturities are in months. The
return on an ``n``-month bond held for one month in excess of the
one-month yield is

    rx = -(n - 1) y_{t+1}^{n-1} + n y_t^n - y_t^1.

It is evaluated as ``n (y_t^n - y_{t+1}^{n-1}) + (y_{t+1}^{n-1} - y_t^1)`` so
that a flat curve and ``n = 1`` give exactly zero in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, DegeneracyError
from .likelihood import DtsmLikelihood

RX_FILL_MODES = ("none", "interpolate", "model")


def observed_excess_return(curve_t, curve_t1, n: int, h: int = 1) -> float:
    """Realized excess return from two yield curves.

    Parameters
    ----------
    curve_t, curve_t1 : mapping maturity (months) -> yield at the origin and one period later.
    n, h : bond maturity and holding period in months.
    """
    n, h = int(n), int(h)
    if h < 1 or n < h:
        raise DataError(f"need 1 <= h <= n, got n={n}, h={h}")
    need = [(curve_t, n, "t"), (curve_t, h, "t")]
    if n > h:
        need.append((curve_t1, n - h, "t+h"))
    for curve, m, when in need:
        if m not in curve:
            raise DataError(f"maturity {m} months missing at date {when} for the {n}-month excess return")
    later = curve_t1[n - h] if n > h else 0.0
    return float(n * (curve_t[n] - later) + h * (later - curve_t[h]))


def interpolate_curve(yields, maturities, targets) -> np.ndarray:
    """Linear interpolation in maturity; rows are dates. No extrapolation."""
    m = np.asarray(maturities, dtype=float)
    targets = np.asarray(targets, dtype=float)
    bad = (targets < m.min()) | (targets > m.max())
    if np.any(bad):
        raise DataError(f"maturities {targets[bad].astype(int).tolist()} lie outside the observed grid "
                        f"[{int(m.min())}, {int(m.max())}]")
    Y = np.atleast_2d(np.asarray(yields, dtype=float))
    return np.stack([np.interp(targets, m, row) for row in Y])


def required_maturities(rx_maturities) -> list[int]:
    """Every maturity an excess-return calculation touches: n, n-1 and 1."""
    out = {1}
    for n in rx_maturities:
        out |= {int(n), int(n) - 1} - {0}
    return sorted(out)


def observed_excess_returns(yields, maturities, rx_maturities, fill: str = "interpolate", model_yields=None):
    """Excess returns ``rx_{t,t+1}`` for ``t = 0..T-1``; shape ``(T, len(rx_maturities))``.

    ``fill`` controls maturities absent from the panel: ``"none"`` raises,
    ``"interpolate"`` interpolates linearly across the observed curve,
    ``"model"`` takes them from ``model_yields`` (a callable mapping the
    missing maturities to a ``(T+1, k)`` array of fitted yields).
    """
    if fill not in RX_FILL_MODES:
        raise DataError(f"unknown rx fill mode {fill!r}")
    Y = np.asarray(yields, dtype=float)
    mats = [int(m) for m in maturities]
    need = required_maturities(rx_maturities)
    missing = [m for m in need if m not in mats]
    cols = {m: Y[:, i] for i, m in enumerate(mats)}
    if missing:
        if fill == "none":
            raise DataError(f"maturities {missing} needed for excess returns are not in the panel; "
                            "supply them or set rx_fill")
        if fill == "interpolate":
            filled = interpolate_curve(Y, mats, missing)
        else:
            if model_yields is None:
                raise DataError("rx_fill=model needs fitted yields")
            filled = np.asarray(model_yields(missing))
        for k, m in enumerate(missing):
            cols[m] = filled[:, k]
    T = Y.shape[0] - 1
    out = np.empty((T, len(rx_maturities)))
    for j, n in enumerate(rx_maturities):
        n = int(n)
        later = cols[n - 1][1:] if n > 1 else 0.0
        out[:, j] = n * (cols[n][:-1] - later) + (later - cols[1][:-1])
    return out


@dataclass
class PredictiveDraws:
    """Particle approximation of the one-step predictive at one forecast origin."""

    t: int
    weights: np.ndarray  # normalized, (n,)
    pc_draws: np.ndarray  # (n, 3)
    rx_draws: np.ndarray  # (n, len(maturities))
    maturities: tuple
    invalid: int = 0

    @property
    def point_rx(self) -> np.ndarray:
        return self.weights @ self.rx_draws

    def rx(self, n: int) -> np.ndarray:
        return self.rx_draws[:, self.maturities.index(int(n))]


def _psd_sqrt(cov) -> np.ndarray:
    """Symmetric square root after clipping tiny negative eigenvalues."""
    w, V = np.linalg.eigh(cov)
    return (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(V, -1, -2)


def rx_from_pc(rot, P_t, P_next, rx_maturities) -> np.ndarray:
    """Model-implied excess returns given the current and next PCs, per particle.

    ``rot`` holds yield loadings; ``P_t`` is ``(3,)`` and ``P_next`` ``(n, 3)``.
    """
    mats = list(rot.maturities)
    A, B = rot.A_P, rot.B_P
    out = np.empty((P_next.shape[0], len(rx_maturities)))
    i1 = mats.index(1)
    y1 = A[..., i1] + B[..., i1, :] @ P_t
    for j, n in enumerate(rx_maturities):
        n = int(n)
        i_n = mats.index(n)
        y_n = A[..., i_n] + B[..., i_n, :] @ P_t
        if n == 1:
            later = 0.0
        else:
            i_m = mats.index(n - 1)
            later = A[..., i_m] + np.einsum("...k,...k->...", B[..., i_m, :], P_next)
        out[:, j] = n * (y_n - later) + (later - y1)
    return out


def predict_excess_returns(Z, logw, lik: DtsmLikelihood, rx_maturities, rng) -> PredictiveDraws:
    """Draw ``P_{t+1}`` per particle and map it to excess returns at the window's last date.

    Particles whose loadings or predictive moments are not finite get zero
    weight and zero draws; their number is reported as ``invalid``.
    """
    rx_maturities = tuple(int(n) for n in rx_maturities)
    need = set(required_maturities(rx_maturities))
    if not need <= set(lik.out_maturities) | set(lik.data.maturities.tolist()):
        lik = DtsmLikelihood(lik.spec, lik.data, lik.sigma_K, tuple(sorted(need | set(lik.out_maturities))),
                             lik.backend)
    Z = np.atleast_2d(Z)
    t = lik.data.T
    pred = lik.predictive(Z, t)
    n = Z.shape[0]
    eps = rng.standard_normal((n, 3))
    ok = np.all(np.isfinite(pred.mean), axis=-1) & np.all(np.isfinite(pred.cov), axis=(-2, -1))
    ok &= np.all(np.isfinite(pred.loadings.A_P), axis=-1) & np.all(np.isfinite(pred.loadings.B_P), axis=(-2, -1))
    mean = np.where(ok[:, None], pred.mean, 0.0)
    cov = np.where(ok[:, None, None], pred.cov, 0.0)
    draws = mean + np.einsum("nij,nj->ni", _psd_sqrt(cov), eps)
    with np.errstate(all="ignore"):
        rx = rx_from_pc(pred.loadings, lik.data.P[t], draws, rx_maturities)
    ok &= np.all(np.isfinite(rx), axis=-1)
    rx = np.where(ok[:, None], rx, 0.0)
    draws = np.where(ok[:, None], draws, 0.0)
    lw = np.where(ok, np.asarray(logw, dtype=float), -np.inf)
    if not np.any(np.isfinite(lw)):
        raise DegeneracyError(f"no particle yields a finite predictive at t={t}")
    w = np.exp(lw - logsumexp(lw))
    return PredictiveDraws(t, w, draws, rx, rx_maturities, int((~ok).sum()))
