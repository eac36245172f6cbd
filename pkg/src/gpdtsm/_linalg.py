"""Cholesky factorization with a single relative-jitter retry."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve

from .errors import ConditioningError

REL_JITTER = 1e-10


def chol_jitter(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``A``.

    On failure the factorization is retried once with ``1e-10`` times the mean
    diagonal added, a scale-aware stand-in for an absolute jitter (yield-unit
    covariances are of order 1e-8).
    """
    if not np.all(np.isfinite(A)):
        raise ConditioningError("matrix has non-finite entries", float("inf"))
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    diag = np.diagonal(A, axis1=-2, axis2=-1)
    jitter = REL_JITTER * np.mean(np.abs(diag), axis=-1)
    eye = np.eye(A.shape[-1])
    try:
        return np.linalg.cholesky(A + jitter[..., None, None] * eye)
    except np.linalg.LinAlgError:
        cond = float(np.max(np.linalg.cond(A)))
        raise ConditioningError(
            f"matrix not positive definite after jitter (condition {cond:.3g})", cond
        ) from None


def chol_logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_inv(L: np.ndarray) -> np.ndarray:
    return cho_solve((L, True), np.eye(L.shape[0]))


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))
