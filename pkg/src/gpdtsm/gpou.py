"""GP-mean Ornstein-Uhlenbeck dynamics of the principal components.

Under the physical measure

    P_t = mu + Phi P_{t-1} + v(M_{t-1}) + Sigma_P eps_t,

with an independent zero-mean GP prior on each component of ``v``. Stacking
the residuals ``s_t = P_t - mu - Phi P_{t-1}`` equation-major gives
``S ~ N(0, K + Sigma_P Sigma_P' (x) I_T)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ._linalg import chol_inv, chol_jitter, chol_logdet, sym
from .gpkernel import GpCov, KernelHypers, build_block_K, gram_blocks
from .termstructure import PcPanel, QParams

PSD_TOL = 1e-8


@dataclass
class PDynParams:
    mu_P_P: np.ndarray
    phi_P_P: np.ndarray
    lambda12: float
    sigma_P_chol: np.ndarray

    @property
    def innovation_cov(self) -> np.ndarray:
        return self.sigma_P_chol @ self.sigma_P_chol.T


@dataclass
class StackedResiduals:
    S: np.ndarray  # (3T,) equation-major
    rows: np.ndarray  # (T, 3)

    @property
    def T(self) -> int:
        return self.rows.shape[0]

    @property
    def per_equation(self) -> np.ndarray:
        return self.rows.T


class PcPredictive(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    gp_correction: np.ndarray


def build_p_dynamics(qp: QParams, mu_P_Q, phi_P_Q, lambda12: float, lambda0=None, lambda1=None) -> PDynParams:
    """Physical drift and feedback from the rotated risk-neutral ones.

    The default risk-price restriction frees only the (first, second) entry
    of the feedback adjustment and sets the drift adjustment to zero.
    ``lambda0`` and a full ``lambda1`` matrix relax this; a supplied
    ``lambda1`` replaces ``lambda12``.
    """
    mu_P_Q = np.asarray(mu_P_Q, dtype=float)
    phi_P_Q = np.asarray(phi_P_Q, dtype=float)
    n = mu_P_Q.shape[0]
    if lambda1 is None:
        lam1 = np.zeros((n, n))
        lam1[0, 1] = lambda12
    else:
        lam1 = np.asarray(lambda1, dtype=float)
    lam0 = np.zeros(n) if lambda0 is None else np.asarray(lambda0, dtype=float)
    return PDynParams(mu_P_Q + lam0, phi_P_Q + lam1, float(lam1[0, 1]), np.asarray(qp.sigma_P_chol, dtype=float))


def residuals(panel, pd: PDynParams) -> StackedResiduals:
    """VAR residuals ``s_t`` for ``t = 1..T`` from a panel (or a raw ``(T+1, 3)`` array)."""
    P = panel.P if isinstance(panel, PcPanel) else np.asarray(panel, dtype=float)
    rows = P[1:] - pd.mu_P_P - P[:-1] @ pd.phi_P_P.T
    return StackedResiduals(rows.T.reshape(-1), rows)


def stack_rows(rows) -> np.ndarray:
    return np.asarray(rows).T.reshape(-1)


def _as_matrix(K) -> np.ndarray:
    return K.K if isinstance(K, GpCov) else np.asarray(K, dtype=float)


def _s_vec(S) -> np.ndarray:
    return S.S if isinstance(S, StackedResiduals) else np.asarray(S, dtype=float).ravel()


def marginal_cov(K, sigma_P_chol) -> np.ndarray:
    """``K + Sigma_P Sigma_P' (x) I_T`` in equation-major layout."""
    Km = _as_matrix(K)
    T = Km.shape[0] // 3
    L = np.asarray(sigma_P_chol, dtype=float)
    return Km + np.kron(L @ L.T, np.eye(T))


def p_loglik(S, K, sigma_P_chol) -> float:
    """Gaussian log-density of the stacked residuals under the GP marginal."""
    s = _s_vec(S)
    Lk = chol_jitter(marginal_cov(K, sigma_P_chol))
    z = solve_triangular(Lk, s, lower=True, check_finite=False)
    return float(-0.5 * s.size * np.log(2 * np.pi) - 0.5 * chol_logdet(Lk) - 0.5 * z @ z)


def posterior_v(S, K, sigma_P_chol):
    """Posterior mean and covariance of the stacked GP values given ``S``."""
    s = _s_vec(S)
    Km = _as_matrix(K)
    Lk = chol_jitter(marginal_cov(Km, sigma_P_chol))
    mean = Km @ cho_solve((Lk, True), s)
    cov = sym(Km - Km @ cho_solve((Lk, True), Km))
    return mean, cov


def predictive_pc(P_T, S, K, k0, k_next, pd: PDynParams) -> PcPredictive:
    """One-step predictive Gaussian of ``P_{T+1}`` given the window residuals."""
    s = _s_vec(S)
    Km = _as_matrix(K)
    Lk = chol_jitter(marginal_cov(Km, pd.sigma_P_chol))
    kn = np.asarray(k_next, dtype=float)
    correction = kn.T @ cho_solve((Lk, True), s)
    mean = pd.mu_P_P + pd.phi_P_P @ np.asarray(P_T, dtype=float) + correction
    cov = np.asarray(k0, dtype=float) + pd.innovation_cov - kn.T @ cho_solve((Lk, True), kn)
    return PcPredictive(mean, clip_psd(cov), correction)


def clip_psd(cov: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetrize and zero small negative eigenvalues; larger ones are an error."""
    cov = sym(cov)
    w, V = np.linalg.eigh(cov)
    if w.min() >= 0:
        return cov
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -tol * scale:
        raise ValueError(f"predictive covariance is indefinite (min eigenvalue {w.min():.3g})")
    return sym((V * np.clip(w, 0, None)) @ V.T)


def p_loglik_grad(S, macros, hypers: KernelHypers, sigma_P_chol):
    """Analytic gradient of :func:`p_loglik` w.r.t. ``log ell_j`` and ``log sigma_j``.

    Returns ``(grad_log_ell, grad_log_sigma)``, each length 3 with zeros for
    inactive blocks. Uses ``d loglik = 0.5 tr((a a' - K_P^{-1}) dK_P)``.
    """
    s = _s_vec(S)
    gp = build_block_K(macros, hypers)
    Lk = chol_jitter(marginal_cov(gp, sigma_P_chol))
    K_inv = chol_inv(Lk)
    alpha = K_inv @ s
    T = gp.T
    m = gp.inputs
    d2 = (m[:, None] - m[None, :]) ** 2
    g_ell = np.zeros(3)
    g_sig = np.zeros(3)
    for j in range(3):
        if not hypers.active[j] or hypers.sigma_K[j] == 0:
            continue
        sl = slice(j * T, (j + 1) * T)
        inner = np.outer(alpha[sl], alpha[sl]) - K_inv[sl, sl]
        Kj = gp.blocks[j]
        dK_ell = Kj * d2 / hypers.ell_K[j] ** 2
        g_ell[j] = 0.5 * np.sum(inner * dK_ell)
        g_sig[j] = 0.5 * np.sum(inner * 2.0 * Kj)
    return g_ell, g_sig


def gp_blocks_time_major(m_a, m_b, ell, sigma, xp=np):
    """Cross-covariance between GP values at inputs ``m_a`` and ``m_b`` in time-major layout.

    Returns ``(..., 3 len(m_a), 3 len(m_b))`` where row ``3 t + j`` is
    equation ``j`` at time ``t``.
    """
    blocks = gram_blocks(m_a, m_b, ell, sigma, xp)  # (..., 3, Ta, Tb)
    Ta, Tb = m_a.shape[0], m_b.shape[0]
    eye = xp.eye(3)
    full = blocks[..., :, :, None, :] * eye[:, None, :, None]  # (..., j, ta, j', tb)
    full = xp.moveaxis(full, -4, -3)  # (..., ta, j, j', tb)
    full = xp.moveaxis(full, -1, -2)  # (..., ta, j, tb, j')
    return full.reshape(full.shape[:-4] + (3 * Ta, 3 * Tb))
