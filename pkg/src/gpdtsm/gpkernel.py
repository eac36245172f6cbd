"""Squared-exponential kernel and the block-diagonal multi-output covariances.

The three PC equations each carry an independent GP in the lagged macro.
Blocks are laid out equation-major: rows ``j*T .. (j+1)*T - 1`` belong to
equation ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ValidationError

N_EQ = 3


def sqexp(x_a, x_b, ell, sigma):
    """``sigma^2 exp(-|x_a - x_b|^2 / (2 ell^2))``; vector inputs use the Euclidean norm."""
    if not ell > 0:
        raise ValidationError("length-scale must be positive")
    d = np.atleast_1d(np.asarray(x_a, dtype=float) - np.asarray(x_b, dtype=float))
    return float(sigma) ** 2 * float(np.exp(-np.dot(d, d) / (2.0 * ell**2)))


@dataclass
class KernelHypers:
    ell_K: np.ndarray
    sigma_K: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        self.ell_K = np.asarray(self.ell_K, dtype=float).reshape(N_EQ)
        self.sigma_K = np.asarray(self.sigma_K, dtype=float).reshape(N_EQ)
        self.active = np.asarray(self.active, dtype=bool).reshape(N_EQ)
        if np.any(self.sigma_K < 0):
            raise ValidationError("sigma_K must be non-negative")
        if np.any(self.ell_K[self.active] <= 0):
            raise ValidationError("active length-scales must be positive")

    @property
    def effective_sigma(self) -> np.ndarray:
        return np.where(self.active, self.sigma_K, 0.0)

    @property
    def safe_ell(self) -> np.ndarray:
        return np.where(self.active, self.ell_K, 1.0)


@dataclass
class GpCov:
    K: np.ndarray
    blocks: np.ndarray  # (3, T, T)
    inputs: np.ndarray

    @property
    def T(self) -> int:
        return self.inputs.shape[0]


def _check_macros(macros) -> np.ndarray:
    m = np.asarray(macros, dtype=float).ravel()
    if not np.all(np.isfinite(m)):
        bad = int(np.flatnonzero(~np.isfinite(m))[0])
        raise DataError(f"non-finite macro value at position {bad}")
    return m


def gram_blocks(x_a, x_b, ell, sigma, xp=np):
    """Per-equation gram matrices ``(..., 3, len(x_a), len(x_b))``.

    ``ell`` and ``sigma`` have shape ``(..., 3)``; a zero ``sigma`` switches the
    block off.
    """
    d2 = (x_a[:, None] - x_b[None, :]) ** 2
    scale = 1.0 / (2.0 * ell**2)
    return (sigma**2)[..., None, None] * xp.exp(-d2 * scale[..., None, None])


def block_diag_eq(blocks) -> np.ndarray:
    """Assemble ``(3, T, T)`` blocks into the equation-major ``3T x 3T`` matrix."""
    n_eq, T, _ = blocks.shape
    K = np.zeros((n_eq * T, n_eq * T))
    for j in range(n_eq):
        K[j * T:(j + 1) * T, j * T:(j + 1) * T] = blocks[j]
    return K


def build_block_K(macros, hypers: KernelHypers) -> GpCov:
    """Block-diagonal prior covariance of the stacked GP values over the window."""
    m = _check_macros(macros)
    blocks = gram_blocks(m, m, hypers.safe_ell, hypers.effective_sigma)
    return GpCov(block_diag_eq(blocks), blocks, m)


def build_cross_K(macros, M_T, hypers: KernelHypers):
    """Prior covariance terms for the next GP value at input ``M_T``.

    Returns ``(k0, k_next)``: ``k0`` is the 3x3 diagonal prior covariance of
    the new values and ``k_next`` (``3T x 3``) its covariance with the window.
    """
    m = _check_macros(macros)
    m_new = _check_macros([M_T])
    T = m.shape[0]
    cross = gram_blocks(m, m_new, hypers.safe_ell, hypers.effective_sigma)[..., 0]
    k_next = np.zeros((N_EQ * T, N_EQ))
    for j in range(N_EQ):
        k_next[j * T:(j + 1) * T, j] = cross[j]
    k0 = np.diag(hypers.effective_sigma**2)
    return k0, k_next
