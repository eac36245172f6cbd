"""Posterior-mode search, Hessian-based proposal moments and GP signal tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..errors import OptimizationError
from ..gpkernel import KernelHypers, build_block_K
from ..gpou import p_loglik, p_loglik_grad
from ..likelihood import DtsmLikelihood, JaxLoglik, ModelData
from ..modelspec import ModelSpec, N, ParamLayout, Theta, encode, parse_model_id
from ..termstructure import QParams, pricing_loadings
from . import rng as rngmod
from .mcmc import ProposalMoments
from .priors import Prior

log = logging.getLogger(__name__)

HESS_FLOOR = 1e-8


@dataclass
class MleResult:
    z: np.ndarray
    log_post: float
    cov: np.ndarray
    moments: ProposalMoments
    converged: bool
    diagonal_fallback: bool = False
    trace: list = field(default_factory=list)


def initial_guess(lik: DtsmLikelihood) -> np.ndarray:
    """Data-driven starting point in transformed coordinates.

    OLS VAR on the PCs gives the shock covariance and eigenvalue guesses;
    the drift constant follows from a least-squares fit of average yields,
    which are affine in it; the measurement variance is the mean squared
    cross-sectional residual.
    """
    d = lik.data
    layout = lik.layout
    P = d.P
    X = np.column_stack([np.ones(d.T), P[:-1]])
    coef, *_ = np.linalg.lstsq(X, P[1:], rcond=None)
    resid = P[1:] - X @ coef
    cov = np.cov(resid, rowvar=False, ddof=X.shape[1]) + 1e-16 * np.eye(N)
    L = np.linalg.cholesky(cov)
    ev = np.sort(np.real(np.linalg.eigvals(coef[1:].T)))[::-1]
    g = np.minimum(ev, 0.999)
    for i in range(1, N):
        g[i] = min(g[i], g[i - 1] - 0.02)

    def yields_fit(k):
        qp = QParams(k, g, L, 1.0)
        load = pricing_loadings(qp, d.maturities, d.W)
        return load

    l0, l1 = yields_fit(0.0), yields_fit(1e-4)
    slope = (l1.A_P - l0.A_P) / 1e-4
    target = np.mean(d.yields - P @ l0.B_P.T, axis=0) - l0.A_P
    k_inf = float(slope @ target / (slope @ slope))
    load = yields_fit(k_inf)
    e = (d.yields - load.A_P - P @ load.B_P.T) @ d.W_perp.T
    s2 = max(float(np.mean(e * e)), 1e-14)
    phi_q = load.phi_P_Q
    theta = Theta(s2, k_inf, g, L)
    theta.lambda1 = np.zeros((N, N))
    theta.lambda1[0, 1] = coef[1:].T[0, 1] - phi_q[0, 1]
    if lik.spec.risk == "full":
        theta.lambda1 = coef[1:].T - phi_q
        theta.lambda0 = coef[0] - load.mu_P_Q
    if lik.spec.is_linear:
        r = resid
        m = d.macros[:-1] - d.macros[:-1].mean()
        theta.phi_pm = (m @ r) / (m @ m)
    return encode(theta, layout)


def _scales(layout: ParamLayout, z0) -> np.ndarray:
    """Typical magnitudes used to precondition the optimizer."""
    s = np.ones(layout.dim)
    lin = [i for i, n in enumerate(layout.names)
           if n in ("L10", "L20", "L21", "k_inf_Q") or n.startswith("phi_pm") or n.startswith("lambda0")]
    s[lin] = np.maximum(np.abs(z0[lin]), 1e-6)
    s[layout.index("g1")] = 1e-3
    for i, n in enumerate(layout.names):
        if n.startswith("lambda1"):
            s[i] = 0.05
    return s


def fd_hessian(grad, z, steps) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrized."""
    D = z.size
    H = np.empty((D, D))
    for j in range(D):
        e = np.zeros(D)
        e[j] = steps[j]
        H[:, j] = (grad(z + e) - grad(z - e)) / (2 * steps[j])
    return 0.5 * (H + H.T)


def moments_from_hessian(z, H_neg, scales):
    """Inverse of the negative log-posterior Hessian with eigenvalue flooring.

    Returns ``(cov, diagonal_fallback)``. Flooring is done in scaled
    coordinates; if the result is still not positive definite the
    coordinate curvatures give a diagonal covariance.
    """
    S = np.diag(scales)
    Hs = S @ H_neg @ S
    try:
        C = np.linalg.inv(Hs)
        w, V = np.linalg.eigh(0.5 * (C + C.T))
        C = (V * np.maximum(w, HESS_FLOOR)) @ V.T
        np.linalg.cholesky(C)
        return S @ C @ S, False
    except np.linalg.LinAlgError:
        d = np.diag(H_neg)
        var = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), scales**2)
        return np.diag(var), True


def mle_and_hessian(lik: DtsmLikelihood, prior: Prior | None = None, z0=None, n_starts: int = 4, seed: int = 0,
                    conditional: bool = False, maxiter: int = 2000) -> MleResult:
    """Posterior mode (maximum likelihood when ``prior`` is None) and t5 proposal moments."""
    jl = JaxLoglik(lik)
    z_init = initial_guess(lik) if z0 is None else np.asarray(z0, dtype=float)
    scales = _scales(lik.layout, z_init)

    def negpost(u, base):
        z = base + scales * u
        v, g = jl.value_and_grad(z)
        if prior is not None:
            v += float(prior.logpdf(z))
            g = g - (z - prior.mean) / prior.sd**2
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return 1e300, np.zeros_like(u)
        return -v, -g * scales

    rng = rngmod.stream(seed, rngmod.OPTIM)
    starts = [z_init] + [z_init + scales * rng.normal(scale=0.5, size=z_init.size) for _ in range(n_starts - 1)]
    best = None
    trace = []
    for k, zs in enumerate(starts):
        res = minimize(negpost, np.zeros(zs.size), args=(zs,), jac=True, method="BFGS",
                       options={"maxiter": maxiter, "gtol": 1e-6})
        z = zs + scales * res.x
        trace.append({"start": k, "fun": float(res.fun), "success": bool(res.success), "nit": int(res.nit),
                      "message": str(res.message)})
        if np.isfinite(res.fun) and (best is None or res.fun < best[1]):
            best = (z, float(res.fun), bool(res.success))
    if best is None or best[1] >= 1e300:
        raise OptimizationError("posterior-mode search failed from every start", trace)
    z_hat, f_hat, ok = best
    # BFGS often stops on precision loss right at the optimum; accept small gradients
    _, g_hat = negpost(np.zeros_like(z_hat), z_hat)
    converged = ok or float(np.max(np.abs(g_hat))) < 1e-2

    def grad_neg(z):
        return negpost((z - z_hat) / scales, z_hat)[1] / scales

    H = fd_hessian(grad_neg, z_hat, 1e-4 * scales)
    cov, fallback = moments_from_hessian(z_hat, H, scales)
    moments = ProposalMoments(z_hat, cov, conditional=conditional)
    return MleResult(z_hat, -f_hat, cov, moments, converged, fallback, trace)


@dataclass
class SigmaKTuning:
    sigma_K: np.ndarray
    c: float
    ell: np.ndarray
    resid_sd: np.ndarray
    z_mle: np.ndarray
    loglik: float
    trace: list = field(default_factory=list)


def residual_sd(s_rows) -> np.ndarray:
    """``sqrt(diag Var(s))`` with the unbiased (ddof=1) variance."""
    return np.sqrt(np.var(np.asarray(s_rows), axis=0, ddof=1))


def tune_sigma_K(data: ModelData, spec: ModelSpec, seed: int = 0, n_starts: int = 5,
                 log_c_bounds=(-10.0, 3.0), log_ell_bounds=(-4.0, 4.0)) -> SigmaKTuning:
    """Three-step GP signal calibration on a training window.

    1. Yields-only MLE with only the (first, second) feedback risk price free.
    2. ``sigma_K = c * sqrt(diag Var(s_hat))`` from the fitted residuals.
    3. Maximize the GP marginal likelihood of ``s_hat`` over the active
       length-scales and ``c``, holding the step-1 estimates fixed.
    """
    base = parse_model_id("M1")
    lik0 = DtsmLikelihood(base, ModelData(data.yields, data.maturities, data.W, data.W_perp))
    mle = mle_and_hessian(lik0, None, n_starts=2, seed=seed)
    if not mle.converged:
        raise OptimizationError("yields-only maximum likelihood did not converge", mle.trace)
    dec = lik0.decode(mle.z[None])
    rot = lik0.loadings(dec)
    s_rows = lik0.p_residual_rows(dec, rot, data.T)[0]
    L = dec.L[0]
    sd = residual_sd(s_rows)
    active = spec.active
    rows = np.flatnonzero(active)
    S = s_rows.T.reshape(-1)
    macros = data.macros[:-1]

    def unpack(x):
        ell = np.ones(N)
        ell[rows] = np.exp(x[:-1])
        c = np.exp(x[-1])
        return KernelHypers(ell, c * sd * active, active), c

    def neg(x):
        hyp, _ = unpack(x)
        try:
            ll = p_loglik(S, build_block_K(macros, hyp), L)
            g_ell, g_sig = p_loglik_grad(S, macros, hyp, L)
        except Exception:  # conditioning failure at extreme hyper-parameters
            return 1e300, np.zeros_like(x)
        grad = np.concatenate([g_ell[rows], [np.sum(g_sig[rows])]])
        return -ll, -grad

    bounds = [log_ell_bounds] * rows.size + [log_c_bounds]
    rng = rngmod.stream(seed, rngmod.OPTIM, 1)
    starts = [np.concatenate([np.zeros(rows.size), [0.0]])]
    starts += [np.concatenate([rng.uniform(-1.5, 1.5, rows.size), [rng.uniform(-4, 1)]]) for _ in range(n_starts - 1)]
    best, trace = None, []
    for x0 in starts:
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        trace.append({"x0": x0.tolist(), "fun": float(res.fun), "x": res.x.tolist(), "message": str(res.message)})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or best.fun >= 1e300:
        raise OptimizationError("sigma_K tuning failed from every start", trace)
    hyp, c = unpack(best.x)
    return SigmaKTuning(hyp.sigma_K, float(c), hyp.ell_K, sd, mle.z, -float(best.fun), trace)
