"""Batched joint log-likelihood of yields and PC dynamics for a particle cloud.

For a window ``Y_{0:t}`` the log-likelihood factorizes as

    sum_{s<=t} log f_Q(y_s | P_s)  +  sum_{1<=s<=t} log f_P(P_s | P_{0:s-1}, M_{0:s-1}).

Both sums are returned term by term so tempered targets (past plus a
fraction of the newest term) and Gibbs sufficient statistics come for free.
The P part with GP blocks is factorized in time-major order: the rows of
the Cholesky solve belonging to time ``s`` give the conditional density of
``P_s`` given the earlier PCs.

All array code goes through a backend namespace so the same functions are
differentiated with jax for gradient checks and the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._backend import NUMPY
from .gpou import gp_blocks_time_major
from .modelspec import TRIL_DIAG, ModelSpec, N, ParamLayout
from .termstructure import RotatedLoadings, jsz_loadings

LOG2PI = float(np.log(2 * np.pi))


@dataclass
class ModelData:
    """Estimation window in model units.

    ``yields`` are monthly decimals, ``macros`` (aligned with ``yields``
    dates) are already on the model scale: standardized for the GP form and
    raw for the linear form.
    """

    yields: np.ndarray
    maturities: np.ndarray
    W: np.ndarray
    W_perp: np.ndarray
    macros: np.ndarray | None = None

    def __post_init__(self):
        self.yields = np.asarray(self.yields, dtype=float)
        self.maturities = np.asarray(self.maturities, dtype=int)
        self.W = np.asarray(self.W, dtype=float)
        self.W_perp = np.asarray(self.W_perp, dtype=float)
        self.P = self.yields @ self.W.T
        if self.macros is not None:
            self.macros = np.asarray(self.macros, dtype=float).ravel()

    @property
    def T(self) -> int:
        """Index of the last observation (dates are ``0..T``)."""
        return self.yields.shape[0] - 1

    @property
    def err_dim(self) -> int:
        return self.W_perp.shape[0]


class Decoded(NamedTuple):
    sigma_e2: object
    L: object
    k_inf: object
    g: object
    ell: object
    lam0: object
    lam1: object
    phi_pm: object


class Terms(NamedTuple):
    """Per-date log-likelihood contributions for dates ``0..t``."""

    ssq: np.ndarray  # (n, t+1) squared measurement errors
    qll: np.ndarray  # (n, t+1)
    pll: np.ndarray  # (n, t+1), column 0 is zero

    @property
    def total(self) -> np.ndarray:
        return self.qll.sum(-1) + self.pll.sum(-1)

    @property
    def past(self) -> np.ndarray:
        return self.qll[:, :-1].sum(-1) + self.pll[:, :-1].sum(-1)

    @property
    def new(self) -> np.ndarray:
        return self.qll[:, -1] + self.pll[:, -1]

    def tempered(self, phi: float) -> np.ndarray:
        return self.past + phi * self.new


class Predictive(NamedTuple):
    mean: np.ndarray  # (n, 3)
    cov: np.ndarray  # (n, 3, 3)
    gp_correction: np.ndarray  # (n, 3)
    loadings: RotatedLoadings


def nan_to_neginf(x):
    return np.where(np.isnan(x), -np.inf, x)


class DtsmLikelihood:
    """Log-likelihood of one model specification on one data window.

    Parameters
    ----------
    spec, layout : model and coordinate layout.
    data : ModelData
    sigma_K : length-3 GP signal sds (used only for the GP form, frozen after tuning).
    out_maturities : extra maturities whose loadings :meth:`predictive` should carry.
    """

    def __init__(self, spec: ModelSpec, data: ModelData, sigma_K=None, out_maturities=(), backend=NUMPY):
        self.spec = spec
        self.layout = ParamLayout(spec)
        self.data = data
        self.backend = backend
        sk = np.zeros(N) if sigma_K is None else np.asarray(sigma_K, dtype=float)
        self.sigma_K = np.where(spec.active, sk, 0.0) if spec.is_gp else np.zeros(N)
        self.use_gp = spec.is_gp and bool(np.any(self.sigma_K > 0))
        if spec.uses_macro and data.macros is None:
            raise ValueError(f"model {spec.model_id} needs a macro series")
        self.out_maturities = tuple(int(m) for m in out_maturities)

    def with_backend(self, backend) -> DtsmLikelihood:
        return DtsmLikelihood(self.spec, self.data, self.sigma_K, self.out_maturities, backend)

    # -- parameter decode --------------------------------------------------

    def decode(self, Z) -> Decoded:
        xp = self.backend.xp
        lay = self.layout
        Lv = Z[..., lay.idx_L]
        Lv = xp.where(TRIL_DIAG, xp.exp(Lv * TRIL_DIAG), Lv)
        L = (Lv @ lay.sel_L).reshape(Z.shape[:-1] + (N, N))
        q = Z[..., lay.idx_q]
        g1 = q[..., 1]
        g2 = g1 - xp.exp(q[..., 2])
        g3 = g2 - xp.exp(q[..., 3])
        g = xp.stack([g1, g2, g3], axis=-1)
        ell = xp.exp(Z[..., lay.idx_ell] @ lay.sel_ell)  # inactive blocks get length-scale 1
        lam0 = Z[..., lay.idx_lam0] @ lay.sel_lam0
        lam1 = (Z[..., lay.idx_lam1] @ lay.sel_lam1).reshape(Z.shape[:-1] + (N, N))
        phi_pm = Z[..., lay.idx_phipm] @ lay.sel_phipm
        return Decoded(xp.exp(Z[..., 0]), L, q[..., 0], g, ell, lam0, lam1, phi_pm)

    def loadings(self, dec: Decoded) -> RotatedLoadings:
        d = self.data
        return jsz_loadings(dec.k_inf, dec.g, dec.L, d.W, d.maturities, self.out_maturities, self.backend)

    # -- components ---------------------------------------------------------

    def _panel_rows(self, rot: RotatedLoadings):
        idx = np.searchsorted(rot.maturities, self.data.maturities)
        return rot.A_P[..., idx], rot.B_P[..., idx, :]

    def measurement_ssq(self, rot: RotatedLoadings, t: int):
        """Squared measurement errors ``|W_perp e_s|^2`` for ``s = 0..t``."""
        xp = self.backend.xp
        d = self.data
        A, B = self._panel_rows(rot)
        fitted = A[..., None, :] + xp.einsum("...jn,sn->...sj", B, d.P[: t + 1])
        e = d.yields[: t + 1] - fitted
        u = xp.einsum("...sj,kj->...sk", e, d.W_perp)
        return xp.sum(u * u, axis=-1)

    def p_dynamics(self, dec: Decoded, rot: RotatedLoadings):
        return rot.mu_P_Q + dec.lam0, rot.phi_P_Q + dec.lam1

    def p_residual_rows(self, dec: Decoded, rot: RotatedLoadings, t: int):
        """``s_1..s_t`` as ``(..., t, 3)``."""
        xp = self.backend.xp
        P = self.data.P
        mu, phi = self.p_dynamics(dec, rot)
        s = P[1 : t + 1] - mu[..., None, :] - xp.einsum("...ij,sj->...si", phi, P[:t])
        if self.spec.is_linear:
            s = s - dec.phi_pm[..., None, :] * self.data.macros[:t, None]
        return s

    def gp_prior_cov(self, dec: Decoded, m_a, m_b):
        sig = xp_broadcast(self.backend.xp, self.sigma_K, dec.ell.shape)
        return gp_blocks_time_major(m_a, m_b, dec.ell, sig, self.backend.xp)

    def _window_chol(self, dec: Decoded, t: int):
        xp = self.backend.xp
        omega = dec.L @ xp.swapaxes(dec.L, -1, -2)
        K = self.gp_prior_cov(dec, self.data.macros[:t], self.data.macros[:t])
        eye_t = np.eye(t)
        noise = (eye_t[:, None, :, None] * omega[..., None, :, None, :]).reshape(omega.shape[:-2] + (3 * t, 3 * t))
        return self.backend.cholesky(K + noise)

    def p_logdens_rows(self, dec: Decoded, s, t: int):
        """Conditional log-density of each ``P_s`` given the past, ``(..., t)``."""
        xp = self.backend.xp
        if t == 0:
            return xp.zeros(s.shape[:-2] + (0,))
        if self.use_gp:
            Lk = self._window_chol(dec, t)
            flat = s.reshape(s.shape[:-2] + (3 * t,))
            z = self.backend.solve_lower(Lk, flat[..., None])[..., 0]
            diag = xp.diagonal(Lk, axis1=-2, axis2=-1)
            rows = -0.5 * LOG2PI - xp.log(diag) - 0.5 * z * z
            return rows.reshape(s.shape[:-2] + (t, 3)).sum(-1)
        L = dec.L
        z = self.backend.solve_lower(L, xp.swapaxes(s, -1, -2))  # (..., 3, t)
        logdet = xp.sum(xp.log(xp.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        return -1.5 * LOG2PI - logdet[..., None] - 0.5 * xp.sum(z * z, axis=-2)

    # -- public --------------------------------------------------------------

    def terms(self, Z, t: int | None = None) -> Terms:
        """Per-date contributions for the window ``0..t`` (numpy backend)."""
        t = self.data.T if t is None else t
        Z = np.atleast_2d(Z)
        with np.errstate(all="ignore"):
            dec = self.decode(Z)
            rot = self.loadings(dec)
            ssq = self.measurement_ssq(rot, t)
            s2 = dec.sigma_e2[..., None]
            dim = self.data.err_dim
            qll = -0.5 * dim * (LOG2PI + np.log(s2)) - 0.5 * ssq / s2
            pll = self.p_logdens_rows(dec, self.p_residual_rows(dec, rot, t), t)
            pll = np.concatenate([np.zeros(qll.shape[:-1] + (1,)), pll], axis=-1)
        bad = ~(np.all(np.isfinite(qll), -1) & np.all(np.isfinite(pll), -1))
        if bad.any():
            qll = np.where(bad[:, None], -np.inf, qll)
            pll = np.where(bad[:, None], 0.0, pll)
            ssq = np.where(bad[:, None], np.inf, ssq)
        return Terms(ssq, qll, pll)

    def loglik(self, Z, t: int | None = None):
        """Total log-likelihood; backend-generic (used under jax for gradients)."""
        xp = self.backend.xp
        t = self.data.T if t is None else t
        dec = self.decode(Z)
        rot = self.loadings(dec)
        ssq = self.measurement_ssq(rot, t)
        s2 = dec.sigma_e2[..., None]
        qll = -0.5 * self.data.err_dim * (LOG2PI + xp.log(s2)) - 0.5 * ssq / s2
        pll = self.p_logdens_rows(dec, self.p_residual_rows(dec, rot, t), t)
        return xp.sum(qll, -1) + xp.sum(pll, -1)

    def predictive(self, Z, t: int | None = None) -> Predictive:
        """Gaussian one-step predictive of ``P_{t+1}`` per particle (numpy backend)."""
        t = self.data.T if t is None else t
        Z = np.atleast_2d(Z)
        with np.errstate(all="ignore"):
            dec = self.decode(Z)
            rot = self.loadings(dec)
            mu, phi = self.p_dynamics(dec, rot)
            P_t = self.data.P[t]
            mean = mu + phi @ P_t
            if self.spec.is_linear:
                mean = mean + dec.phi_pm * self.data.macros[t]
            omega = dec.L @ np.swapaxes(dec.L, -1, -2)
            corr = np.zeros_like(mean)
            cov = omega.copy()
            if self.use_gp and t > 0:
                s = self.p_residual_rows(dec, rot, t)
                Lk = self._window_chol(dec, t)
                m = self.data.macros
                k = self.gp_prior_cov(dec, m[:t], m[t : t + 1])  # (n, 3t, 3)
                k0 = self.gp_prior_cov(dec, m[t : t + 1], m[t : t + 1])
                flat = s.reshape(s.shape[:-2] + (3 * t,))
                rhs = np.concatenate([flat[..., None], k], axis=-1)
                sol = self.backend.solve_lower(Lk, rhs)
                a, Ak = sol[..., 0], sol[..., 1:]
                corr = np.einsum("...ki,...k->...i", Ak, a)
                cov = k0 + omega - np.einsum("...ki,...kj->...ij", Ak, Ak)
            elif self.use_gp:
                m = self.data.macros
                cov = cov + self.gp_prior_cov(dec, m[t : t + 1], m[t : t + 1])
            cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        return Predictive(mean + corr, cov, corr, rot)

    def posterior_v(self, Z, t: int | None = None):
        """Posterior mean and marginal sds of the GP values ``v(M_{s-1})``, ``s = 1..t``.

        Returns arrays ``(n, t, 3)``.
        """
        t = self.data.T if t is None else t
        Z = np.atleast_2d(Z)
        dec = self.decode(Z)
        rot = self.loadings(dec)
        s = self.p_residual_rows(dec, rot, t)
        if not self.use_gp:
            zeros = np.zeros(s.shape)
            return zeros, zeros
        m = self.data.macros[:t]
        K = self.gp_prior_cov(dec, m, m)
        Lk = self._window_chol(dec, t)
        flat = s.reshape(s.shape[:-2] + (3 * t,))
        sol = self.backend.solve_lower(Lk, np.concatenate([flat[..., None], K], axis=-1))
        a, AK = sol[..., 0], sol[..., 1:]
        mean = np.einsum("...ki,...k->...i", AK, a)
        var = np.diagonal(K, axis1=-2, axis2=-1) - np.sum(AK * AK, axis=-2)
        sd = np.sqrt(np.clip(var, 0, None))
        return mean.reshape(s.shape), sd.reshape(s.shape)

    def posterior_v_draws(self, Z, rng, t: int | None = None) -> np.ndarray:
        """One joint posterior draw of the GP path per row of ``Z``; ``(n, t, 3)``.

        Uses the full posterior covariance (cost cubic in ``3t`` per row), so
        callers should pass a modest subsample of particles.
        """
        t = self.data.T if t is None else t
        Z = np.atleast_2d(Z)
        if not self.use_gp:
            return np.zeros((Z.shape[0], t, 3))
        dec = self.decode(Z)
        rot = self.loadings(dec)
        s = self.p_residual_rows(dec, rot, t)
        m = self.data.macros[:t]
        K = self.gp_prior_cov(dec, m, m)
        Lk = self._window_chol(dec, t)
        flat = s.reshape(s.shape[:-2] + (3 * t,))
        sol = self.backend.solve_lower(Lk, np.concatenate([flat[..., None], K], axis=-1))
        a, AK = sol[..., 0], sol[..., 1:]
        mean = np.einsum("...ki,...k->...i", AK, a)
        cov = K - np.einsum("...ki,...kj->...ij", AK, AK)
        w, V = np.linalg.eigh(0.5 * (cov + np.swapaxes(cov, -1, -2)))
        z = rng.standard_normal(mean.shape)
        draw = mean + np.einsum("...ij,...j->...i", V, np.sqrt(np.clip(w, 0, None)) * z)
        return draw.reshape(s.shape) * (self.sigma_K > 0)


# The graphs are small and evaluated a few hundred times per optimization, so
# LLVM's optimization passes cost more time (about 3 s per graph) than they save.
FAST_COMPILE = {"xla_backend_optimization_level": 0}


def xp_broadcast(xp, v, shape):
    return xp.broadcast_to(xp.asarray(v), shape)


def _rebind(base: ModelData, yields, macros, W, W_perp) -> ModelData:
    """ModelData view over (possibly traced) arrays, skipping numpy coercion."""
    d = object.__new__(ModelData)
    d.yields, d.maturities, d.W, d.W_perp = yields, base.maturities, W, W_perp
    d.P = yields @ W.T
    d.macros = macros
    return d


class JaxLoglik:
    """Jitted log-likelihood and gradient with the data passed as arguments.

    One compilation serves every dataset with the same shapes, spec and
    maturity grid.
    """

    def __init__(self, lik: DtsmLikelihood):
        import jax

        from ._backend import jax_backend

        be = jax_backend()
        spec, sigma_K, base = lik.spec, lik.sigma_K, lik.data

        def f(Z, yields, macros, W, W_perp):
            data = _rebind(base, yields, macros, W, W_perp)
            return DtsmLikelihood(spec, data, sigma_K, (), be).loglik(Z)

        self._jitted = {"f": jax.jit(f), "g": jax.jit(jax.value_and_grad(f))}
        self._compiled: dict = {}
        self.lik = lik

    def _args(self, data: ModelData | None):
        d = self.lik.data if data is None else data
        m = d.macros if d.macros is not None else np.zeros(d.yields.shape[0])
        return tuple(np.asarray(a, dtype=float) for a in (d.yields, m, d.W, d.W_perp))

    def _call(self, which, Z, data):
        args = (np.asarray(Z, dtype=float),) + self._args(data)
        key = (which,) + tuple(a.shape for a in args)
        fn = self._compiled.get(key)
        if fn is None:
            lowered = self._jitted[which].lower(*args)
            fn = self._compiled[key] = lowered.compile(compiler_options=FAST_COMPILE)
        return fn(*args)

    def value(self, Z, data: ModelData | None = None) -> float:
        return float(self._call("f", Z, data))

    def value_and_grad(self, Z, data: ModelData | None = None):
        v, g = self._call("g", Z, data)
        return float(v), np.asarray(g)
