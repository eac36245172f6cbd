"""Linear unspanned-macro VAR benchmark.

    P_t = mu + Phi P_{t-1} + Phi_PM M_{t-1} + Sigma_P eps_t

written as ``X = B Z + U`` with ``Z_t = [1, P_{t-1}, M_{t-1}]`` and
``B = [mu, Phi, Phi_PM]``. The free coefficients are a selection of
``vec(B)`` around the risk-neutral values: ``vec(B) = S_sel lambda_gamma + r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ValidationError
from .termstructure import PcPanel

N_PC = 3
N_MACRO = 1
N_COLS = 1 + N_PC + N_MACRO
LAMBDA12_INDEX = 2 * N_PC  # vec position of Phi[0, 1] (column-major)
PHI_PM_OFFSET = (1 + N_PC) * N_PC


@dataclass
class LinearRestriction:
    S_sel: np.ndarray
    r_vec: np.ndarray
    free_index: np.ndarray
    lambda_gamma: np.ndarray | None = None

    @property
    def n_free(self) -> int:
        return self.S_sel.shape[1]

    def beta(self, lambda_gamma=None) -> np.ndarray:
        lg = self.lambda_gamma if lambda_gamma is None else np.asarray(lambda_gamma, dtype=float)
        return self.S_sel @ lg + self.r_vec

    def coefficients(self, lambda_gamma=None) -> np.ndarray:
        """``B`` as an ``N x (N+R+1)`` matrix."""
        return self.beta(lambda_gamma).reshape(N_COLS, N_PC).T

    def free_from_beta(self, beta) -> np.ndarray:
        return self.S_sel.T @ (np.asarray(beta, dtype=float) - self.r_vec)


def free_positions(mask, lambda12: bool = True, free_drift: bool = False, free_feedback: bool = False) -> np.ndarray:
    """``vec(B)`` indices of the free coefficients, in ``lambda_gamma`` order."""
    mask = np.asarray(mask, dtype=bool).reshape(N_PC)
    idx = []
    if free_drift:
        idx.extend(range(N_PC))
    if free_feedback:
        idx.extend(range(N_PC, PHI_PM_OFFSET))
    elif lambda12:
        idx.append(LAMBDA12_INDEX)
    idx.extend(PHI_PM_OFFSET + i for i in range(N_PC) if mask[i])
    return np.array(idx, dtype=int)


def build_restriction(mask, mu_P_Q, phi_P_Q, lambda12: bool = True, free_drift: bool = False,
                      free_feedback: bool = False) -> LinearRestriction:
    """Selection matrix and offset for a macro mask.

    ``mask[i]`` frees row ``i`` of ``Phi_PM``. By default the only free
    risk price is the (first, second) feedback entry; ``free_drift`` and
    ``free_feedback`` release the drift and the whole feedback adjustment.
    """
    idx = free_positions(mask, lambda12, free_drift, free_feedback)
    if idx.size == 0:
        raise ValidationError("restriction has no free coefficients (empty mask without lambda12)")
    S = np.zeros((N_PC * N_COLS, idx.size))
    S[idx, np.arange(idx.size)] = 1.0
    B0 = np.zeros((N_PC, N_COLS))
    B0[:, 0] = mu_P_Q
    B0[:, 1:1 + N_PC] = phi_P_Q
    return LinearRestriction(S, B0.T.reshape(-1), idx)


def _lagged_macro(macros, T: int) -> np.ndarray:
    m = np.asarray(macros, dtype=float).ravel()
    if m.size == T + 1:
        return m[:-1]
    if m.size == T:
        return m
    raise ValidationError(f"macro series length {m.size} does not match T={T}")


def regressors(P, macros) -> np.ndarray:
    """``Z`` rows ``[1, P_{t-1}, M_{t-1}]`` for ``t = 1..T``.

    ``macros`` is either aligned with ``P`` (length ``T+1``) or already
    lagged (length ``T``).
    """
    P = np.asarray(P, dtype=float)
    T = P.shape[0] - 1
    m = _lagged_macro(macros, T)
    return np.column_stack([np.ones(T), P[:-1], m])


def linear_residuals(P, macros, B) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return P[1:] - regressors(P, macros) @ np.asarray(B).T


def linear_p_loglik(panel, macros, qp, lambda_gamma, mask, mu_P_Q, phi_P_Q, **restriction_kw) -> float:
    """Gaussian VAR log-likelihood with innovation covariance ``Sigma_P Sigma_P'``."""
    P = panel.P if isinstance(panel, PcPanel) else np.asarray(panel, dtype=float)
    restr = build_restriction(mask, mu_P_Q, phi_P_Q, **restriction_kw)
    U = linear_residuals(P, macros, restr.coefficients(lambda_gamma))
    return gaussian_rows_loglik(U, qp.sigma_P_chol)


def gaussian_rows_loglik(U, sigma_P_chol) -> float:
    """Sum over rows of ``log N(u_t | 0, L L')``."""
    L = np.asarray(sigma_P_chol, dtype=float)
    Z = solve_triangular(L, np.asarray(U).T, lower=True, check_finite=False)
    T, n = np.asarray(U).shape
    return float(
        -0.5 * T * n * np.log(2 * np.pi) - T * np.sum(np.log(np.abs(np.diag(L)))) - 0.5 * np.sum(Z * Z)
    )
