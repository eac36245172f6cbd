"""Gaussian affine term-structure pricing in the JSZ canonical form.

Latent states ``X_t`` have risk-neutral dynamics ``mu_Q = [k_inf, 0, ..., 0]``,
``Phi_Q = diag(g)`` and short rate ``r_t = 1'X_t``. Yields are rotated onto
observed principal components ``P_t = W y_t``.

Units: yields are continuously compounded decimals per month and maturities
are in months.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._backend import NUMPY
from .errors import (
    DegeneratePanelError,
    DomainError,
    IdentificationError,
    KnifeEdgeRotationError,
    ValidationError,
)

KNIFE_EDGE_COND = 1e12


@dataclass
class QParams:
    """Risk-neutral parameters of one draw.

    ``sigma_P_chol`` is the Cholesky factor of the PC innovation covariance.
    ``compute_latent_loadings`` called without ``W`` reads it as the latent
    factor instead.
    """

    k_inf_Q: float
    g_Q: np.ndarray
    sigma_P_chol: np.ndarray
    sigma_e2: float = 1.0

    def __post_init__(self):
        self.g_Q = np.atleast_1d(np.asarray(self.g_Q, dtype=float))
        self.sigma_P_chol = np.atleast_2d(np.asarray(self.sigma_P_chol, dtype=float))
        self.k_inf_Q = float(self.k_inf_Q)
        self.sigma_e2 = float(self.sigma_e2)

    @property
    def n_factors(self) -> int:
        return self.g_Q.shape[0]

    def validate(self) -> None:
        check_eigenvalues(self.g_Q)
        L = self.sigma_P_chol
        if L.shape != (self.n_factors, self.n_factors) or np.any(np.triu(L, 1) != 0):
            raise ValidationError("sigma_P_chol must be lower triangular N x N")
        if np.any(np.diag(L) <= 0):
            raise ValidationError("sigma_P_chol needs a strictly positive diagonal")
        if not self.sigma_e2 > 0:
            raise ValidationError("sigma_e2 must be positive")


@dataclass
class PricingLoadings:
    A_X: np.ndarray
    B_X: np.ndarray
    A_P: np.ndarray
    B_P: np.ndarray
    delta0_P: float
    delta1_P: np.ndarray
    maturities: np.ndarray
    mu_P_Q: np.ndarray | None = None
    phi_P_Q: np.ndarray | None = None

    def yields(self, P: np.ndarray) -> np.ndarray:
        """Model-implied yields for PC rows ``P`` (shape ``(T, N)``)."""
        return self.A_P + np.asarray(P) @ self.B_P.T


@dataclass
class PcPanel:
    dates: np.ndarray
    P: np.ndarray
    W: np.ndarray
    W_perp: np.ndarray
    maturities: np.ndarray | None = None
    explained: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_factors(self) -> int:
        return self.W.shape[0]


class RotatedLoadings(NamedTuple):
    """Batched output of :func:`jsz_loadings`; leading axes index particles."""

    maturities: np.ndarray
    A_P: object  # (..., M)
    B_P: object  # (..., M, N)
    A_X: object
    B_X: object
    mu_P_Q: object  # (..., N)
    phi_P_Q: object  # (..., N, N)
    WB: object
    delta0_P: object
    delta1_P: object


def check_maturities(maturities) -> np.ndarray:
    mats = np.asarray(maturities)
    if mats.ndim != 1 or mats.size == 0:
        raise DomainError("maturities must be a non-empty 1-D sequence")
    if np.any(mats < 1):
        raise DomainError(f"maturities must be >= 1 month, got {mats.min()}")
    if np.any(mats != np.round(mats)):
        raise DomainError("maturities must be whole months")
    mats = mats.astype(int)
    if np.any(np.diff(mats) <= 0):
        raise DomainError("maturities must be strictly increasing")
    return mats


def check_eigenvalues(g) -> np.ndarray:
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if g.size > 1 and np.any(np.diff(g) >= 0):
        raise IdentificationError(
            f"g_Q must be strictly decreasing (distinct eigenvalues), got {g}"
        )
    return g


def compute_latent_loadings(qp: QParams, maturities, W=None):
    """Yield loadings on the latent state by the forward bond-price recursion.

    Returns ``(A_X, B_X)`` with shapes ``(J,)`` and ``(J, N)``; row ``j`` gives
    ``y^n = A_{n,X} + B_{n,X}' X`` for ``n = maturities[j]``.

    The convexity term needs the latent shock loading ``Sigma``. With ``W``
    given it is recovered from the PC factor as ``(W B_X)^{-1} Sigma_P``
    (``B`` does not depend on ``Sigma``); otherwise ``qp.sigma_P_chol`` is
    used as ``Sigma`` directly.
    """
    mats = check_maturities(maturities)
    g = check_eigenvalues(qp.g_Q)
    n_f = g.size
    delta0 = 0.0
    delta1 = np.ones(n_f)
    mu_q = np.zeros(n_f)
    mu_q[0] = qp.k_inf_Q
    nmax = int(mats[-1])

    B = -delta1
    B_seq = [B]
    for _ in range(1, nmax):
        B = g * B - delta1  # Phi_Q' B_n - delta_1 with Phi_Q diagonal
        B_seq.append(B)
    B_X = np.array([-B_seq[m - 1] / m for m in mats])

    if W is None:
        sigma = np.asarray(qp.sigma_P_chol, dtype=float).reshape(n_f, n_f)
    else:
        sigma = np.linalg.solve(np.asarray(W) @ B_X, qp.sigma_P_chol)
    omega = sigma @ sigma.T

    A = -delta0
    A_seq = [A]
    for n in range(1, nmax):
        Bn = B_seq[n - 1]
        A = A + Bn @ mu_q + 0.5 * Bn @ omega @ Bn - delta0
        A_seq.append(A)
    A_X = np.array([-A_seq[m - 1] / m for m in mats])
    return A_X, B_X


def rotate_loadings(A_X, B_X, W, maturities=None, qp: QParams | None = None) -> PricingLoadings:
    """Re-express latent loadings in terms of the PCs ``P_t = W y_t``.

    ``W`` must have one column per row of ``B_X``. When ``qp`` is supplied the
    rotated risk-neutral drift and feedback are attached as well.
    """
    A_X = np.asarray(A_X, dtype=float)
    B_X = np.asarray(B_X, dtype=float)
    W = np.asarray(W, dtype=float)
    WB = W @ B_X
    cond = np.linalg.cond(WB)
    # a vanishing W B_X is singular even when its condition number is moderate
    tiny = np.linalg.norm(WB) <= 1e-12 * np.linalg.norm(W) * np.linalg.norm(B_X)
    if tiny or not np.isfinite(cond) or cond > KNIFE_EDGE_COND:
        raise KnifeEdgeRotationError(
            f"W B_X is singular to working precision (condition number {cond:.3g})"
        )
    WB_inv = _refined_inv(WB, np.linalg.inv(WB))
    WA = W @ A_X
    h = WB_inv @ WA
    h = h + WB_inv @ (WA - WB @ h)  # one refinement step; W A_P = 0 up to rounding
    B_P = B_X @ WB_inv
    A_P = A_X - B_X @ h
    n_f = B_X.shape[1]
    delta1 = np.ones(n_f)
    delta0_P = float(-delta1 @ h)
    delta1_P = delta1 @ WB_inv
    mu_P_Q = phi_P_Q = None
    if qp is not None:
        phi_P_Q = WB @ np.diag(qp.g_Q) @ WB_inv
        mu_q = np.zeros(n_f)
        mu_q[0] = qp.k_inf_Q
        mu_P_Q = WB @ mu_q + (np.eye(n_f) - phi_P_Q) @ WA
    mats = None if maturities is None else check_maturities(maturities)
    return PricingLoadings(A_X, B_X, A_P, B_P, delta0_P, delta1_P, mats, mu_P_Q, phi_P_Q)


def pricing_loadings(qp: QParams, maturities, W) -> PricingLoadings:
    """Convenience: latent loadings (with ``Sigma`` from ``Sigma_P``) then rotation."""
    A_X, B_X = compute_latent_loadings(qp, maturities, W=W)
    return rotate_loadings(A_X, B_X, W, maturities, qp)


def q_loglik(panel: PcPanel, yields, loadings: PricingLoadings, sigma_e2: float) -> float:
    """Cross-sectional log-likelihood: ``W_perp e_t ~ N(0, sigma_e2 I_{J-N})``."""
    y = np.asarray(yields, dtype=float)
    if sigma_e2 <= 0:
        raise ValidationError("sigma_e2 must be positive")
    e = y - loadings.A_P - panel.P @ loadings.B_P.T
    u = e @ panel.W_perp.T
    dim = u.shape[1]
    n_obs = u.shape[0]
    return float(
        -0.5 * n_obs * dim * np.log(2 * np.pi * sigma_e2) - 0.5 * np.sum(u * u) / sigma_e2
    )


def extract_pcs(yields, maturities=None, n_factors: int = 3, dates=None) -> PcPanel:
    """First ``n_factors`` principal components of the yield panel.

    Loadings are eigenvector rows of the sample covariance, each signed so its
    largest-magnitude entry is positive. PCs are ``P = y W'`` (no demeaning).
    """
    y = np.asarray(yields, dtype=float)
    if y.ndim != 2:
        raise DegeneratePanelError("yields must be a (T+1) x J matrix")
    n_obs, J = y.shape
    if not np.all(np.isfinite(y)):
        raise DegeneratePanelError("yields contain non-finite values")
    if n_obs <= J:
        raise DegeneratePanelError(f"need more dates than maturities (T+1={n_obs}, J={J})")
    if not 1 <= n_factors < J:
        raise DegeneratePanelError(f"n_factors must be in [1, J-1], got {n_factors}")
    cov = np.cov(y, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order].T
    if evals[0] <= 0 or evals[0] <= 1e-14 * np.abs(y).max() ** 2:
        raise DegeneratePanelError("yield covariance has no variation (rank 0)")
    big = np.argmax(np.abs(evecs), axis=1)
    signs = np.sign(evecs[np.arange(J), big])
    evecs = evecs * signs[:, None]
    W = evecs[:n_factors]
    W_perp = evecs[n_factors:]
    explained = np.clip(evals, 0, None) / np.clip(evals, 0, None).sum()
    if dates is None:
        dates = np.arange(n_obs)
    mats = None if maturities is None else check_maturities(maturities)
    return PcPanel(np.asarray(dates), y @ W.T, W, W_perp, mats, explained)


def pcs_with_loadings(yields, W, maturities=None, dates=None) -> PcPanel:
    """Build a panel from a frozen loading matrix (e.g. estimated on training data)."""
    y = np.asarray(yields, dtype=float)
    W = np.asarray(W, dtype=float)
    W_perp = null_space_rows(W)
    if dates is None:
        dates = np.arange(y.shape[0])
    mats = None if maturities is None else check_maturities(maturities)
    return PcPanel(np.asarray(dates), y @ W.T, W, W_perp, mats)


def _refined_inv(A, X):
    """One Newton step ``X (2I - A X)`` on an approximate inverse."""
    return X + X @ (np.eye(A.shape[-1]) - A @ X)


def null_space_rows(W) -> np.ndarray:
    """Orthonormal rows spanning the null space of ``W``."""
    W = np.asarray(W, dtype=float)
    _, _, vt = np.linalg.svd(W)
    return vt[W.shape[0]:]


# ---------------------------------------------------------------------------
# batched core (numpy for particles, jax.numpy for autodiff)


def jsz_loadings(k_inf, g, L, W, panel_maturities, out_maturities=(), backend=NUMPY) -> RotatedLoadings:
    """Rotated loadings for a stack of parameter draws.

    ``k_inf`` has shape ``(...)``, ``g`` ``(..., N)`` and ``L`` ``(..., N, N)``.
    Loadings are returned on the sorted union of ``panel_maturities``,
    ``out_maturities`` and the one-month maturity. Both recursions are
    evaluated as cumulative sums/products, i.e. the forward recursion unrolled.
    """
    xp = backend.xp
    panel = np.asarray(panel_maturities, dtype=int)
    mats = np.array(sorted(set(panel.tolist()) | {int(m) for m in out_maturities} | {1}))
    nmax = int(mats[-1])
    pidx = np.searchsorted(mats, panel)
    n_all = np.arange(1, nmax + 1, dtype=float)

    # B_n = -(1 + g + ... + g^{n-1}) elementwise
    powers = xp.cumprod(xp.broadcast_to(g[..., None, :], g.shape[:-1] + (nmax - 1, g.shape[-1])), axis=-2)
    powers = xp.concatenate([xp.ones_like(g)[..., None, :], powers], axis=-2)
    B_un = -xp.cumsum(powers, axis=-2)  # (..., nmax, N), B_n for n = 1..nmax
    B_un_m = B_un[..., mats - 1, :]
    B_X = -B_un_m / mats[:, None].astype(float)
    B_Xp = B_X[..., pidx, :]

    WB = xp.einsum("nj,...jk->...nk", W, B_Xp)
    WB_inv = _refined_inv(WB, backend.inv(WB))
    sig_x = WB_inv @ L
    omega_x = sig_x @ xp.swapaxes(sig_x, -1, -2)
    quad = xp.einsum("...mi,...ij,...mj->...m", B_un, omega_x, B_un)
    incr = k_inf[..., None] * B_un[..., 0] + 0.5 * quad
    A_un = xp.concatenate(
        [xp.zeros_like(incr[..., :1]), xp.cumsum(incr[..., :-1], axis=-1)], axis=-1
    )
    A_X_all = -A_un / n_all
    A_X = A_X_all[..., mats - 1]
    A_Xp = A_X[..., pidx]

    WA = xp.einsum("nj,...j->...n", W, A_Xp)
    h = xp.einsum("...ij,...j->...i", WB_inv, WA)
    h = h + xp.einsum("...ij,...j->...i", WB_inv, WA - xp.einsum("...ij,...j->...i", WB, h))
    B_P = B_X @ WB_inv
    A_P = A_X - xp.einsum("...mn,...n->...m", B_X, h)
    phi_P_Q = (WB * g[..., None, :]) @ WB_inv
    mu_P_Q = WB[..., :, 0] * k_inf[..., None] + WA - xp.einsum("...ij,...j->...i", phi_P_Q, WA)
    delta0_P = -xp.sum(h, axis=-1)
    delta1_P = xp.sum(WB_inv, axis=-2)
    return RotatedLoadings(mats, A_P, B_P, A_X, B_X, mu_P_Q, phi_P_Q, WB, delta0_P, delta1_P)
