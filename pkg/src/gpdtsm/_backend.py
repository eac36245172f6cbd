"""Array-namespace shim so the likelihood core runs on numpy or jax.numpy.

The numpy path is used for batched particle evaluation; the jax path only
for automatic differentiation of the single-parameter log-likelihood.
"""

from __future__ import annotations

import functools

import numpy as np
from scipy.linalg import solve_triangular

KNIFE_EDGE_COND = 1e12


def _finite_items(a):
    ok = np.all(np.isfinite(a), axis=(-2, -1))
    eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    return ok, np.where(ok[..., None, None], a, eye)


class NumpyBackend:
    """Batched numpy linear algebra where a failing item yields NaN, not an exception.

    A particle with a non-finite, singular or non-positive-definite matrix
    then ends up with a NaN log-likelihood that the caller maps to ``-inf``.
    """

    name = "numpy"
    xp = np

    @staticmethod
    def cholesky(a):
        from ._linalg import chol_jitter
        from .errors import ConditioningError

        ok, a_safe = _finite_items(a)
        try:
            out = np.linalg.cholesky(a_safe)
        except np.linalg.LinAlgError:
            flat = a_safe.reshape((-1,) + a.shape[-2:])
            out = np.empty_like(flat)
            for i in range(flat.shape[0]):
                try:
                    out[i] = chol_jitter(flat[i])
                except ConditioningError:
                    out[i] = np.nan
            out = out.reshape(a.shape)
        if not ok.all():
            out = np.where(ok[..., None, None], out, np.nan)
        return out

    @staticmethod
    def inv(a):
        """Inverse with items above the knife-edge condition number set to NaN."""
        ok, a_safe = _finite_items(a)
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(a_safe)
        ok = ok & np.isfinite(cond) & (cond < KNIFE_EDGE_COND)
        eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
        out = np.linalg.inv(np.where(ok[..., None, None], a_safe, eye))
        return np.where(ok[..., None, None], out, np.nan)

    @staticmethod
    def solve_lower(L, b):
        """Solve ``L x = b`` for lower-triangular ``L`` with leading batch dims."""
        if L.ndim == 2:
            return solve_triangular(L, b, lower=True, check_finite=False)
        batch = L.shape[:-2]
        Lf = L.reshape((-1,) + L.shape[-2:])
        bf = b.reshape((-1,) + b.shape[len(batch):])
        out = np.full(bf.shape, np.nan, dtype=np.result_type(L, b))
        for i in range(Lf.shape[0]):
            if np.isfinite(Lf[i, 0, 0]) and np.all(np.isfinite(np.diagonal(Lf[i]))):
                out[i] = solve_triangular(Lf[i], bf[i], lower=True, check_finite=False)
        return out.reshape(b.shape)


class JaxBackend:
    name = "jax"

    def __init__(self):
        import jax

        jax.config.update("jax_enable_x64", True)
        import jax.numpy as jnp
        import jax.scipy.linalg as jsl

        self.xp = jnp
        self._jsl = jsl

    def cholesky(self, a):
        return self.xp.linalg.cholesky(a)

    def inv(self, a):
        return self.xp.linalg.inv(a)

    def solve_lower(self, L, b):
        return self._jsl.solve_triangular(L, b, lower=True)


NUMPY = NumpyBackend()


@functools.lru_cache(maxsize=1)
def jax_backend() -> JaxBackend:
    return JaxBackend()
