"""Blocked MCMC kernel shared by IBIS jittering and full-data chains.

One sweep updates, in order:

(a) ``sigma_e2`` by an inverse-gamma draw from its tempered conditional
    likelihood kernel, corrected by a Metropolis-Hastings step for the
    log-normal prior;
(b) the PC shock Cholesky factor, (c) the risk-neutral block and (d) the
    P-dynamics block (length-scales, risk prices, linear macro loadings),
    each by an independence sampler with multivariate t5 proposals.

The target at tempering exponent ``phi`` is
``prior x f(Y_{0:t-1}) x f(Y_t | Y_{0:t-1})^phi``. Every array has one row per
particle (or chain); a sweep advances all of them at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from ..likelihood import LOG2PI, DtsmLikelihood
from . import rng as rngmod
from .priors import Prior

DF = 5.0
BLOCK_ORDER = ("sigma_e2", "sigma_P", "q", "pdyn")
COV_FLOOR = 1e-8
BETA_FLOOR = 1e-12


@dataclass
class ChainState:
    """Particles plus the cached sufficient statistics of their likelihood."""

    Z: np.ndarray
    ssq_past: np.ndarray
    ssq_new: np.ndarray
    pll_past: np.ndarray
    pll_new: np.ndarray
    logprior: np.ndarray
    n_past: int  # number of measurement dates before the newest one
    err_dim: int

    def qll(self, log_s2, ssq, n_dates):
        return -0.5 * self.err_dim * n_dates * (LOG2PI + log_s2) - 0.5 * ssq * np.exp(-log_s2)

    def loglik_past(self) -> np.ndarray:
        return self.qll(self.Z[:, 0], self.ssq_past, self.n_past) + self.pll_past

    def loglik_new(self) -> np.ndarray:
        return self.qll(self.Z[:, 0], self.ssq_new, 1) + self.pll_new

    def target(self, phi: float) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            out = self.logprior + self.loglik_past() + phi * self.loglik_new()
        return np.where(np.isnan(out), -np.inf, out)

    def take(self, idx) -> ChainState:
        return ChainState(self.Z[idx], self.ssq_past[idx], self.ssq_new[idx], self.pll_past[idx],
                          self.pll_new[idx], self.logprior[idx], self.n_past, self.err_dim)

    def replace(self, mask, other: ChainState) -> ChainState:
        def pick(a, b):
            return np.where(mask.reshape((-1,) + (1,) * (a.ndim - 1)), b, a)

        return ChainState(pick(self.Z, other.Z), pick(self.ssq_past, other.ssq_past),
                          pick(self.ssq_new, other.ssq_new), pick(self.pll_past, other.pll_past),
                          pick(self.pll_new, other.pll_new), pick(self.logprior, other.logprior),
                          self.n_past, self.err_dim)


def evaluate(lik: DtsmLikelihood, prior: Prior, Z) -> ChainState:
    """Likelihood statistics of ``Z`` on the window ``0..t`` with ``t`` the newest date."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    tr = lik.terms(Z)
    ssq = tr.ssq
    bad = ~np.isfinite(tr.qll).all(-1)
    pll = np.where(bad[:, None], -np.inf, tr.pll)
    return ChainState(Z, ssq[:, :-1].sum(-1), ssq[:, -1], pll[:, :-1].sum(-1), pll[:, -1],
                      prior.logpdf(Z), lik.data.T, lik.data.err_dim)


@dataclass
class ProposalMoments:
    """Gaussian moments behind the t5 independence proposals.

    With ``conditional=True`` a block's proposal is the Gaussian conditional
    of that block given the particle's other coordinates; otherwise the
    block marginal.
    """

    mean: np.ndarray
    cov: np.ndarray
    df: float = DF
    conditional: bool = True

    @classmethod
    def from_particles(cls, Z, weights=None, conditional: bool = True) -> ProposalMoments:
        Z = np.asarray(Z, dtype=float)
        w = np.full(Z.shape[0], 1.0 / Z.shape[0]) if weights is None else np.asarray(weights) / np.sum(weights)
        mean = w @ Z
        D = Z - mean
        cov = (D * w[:, None]).T @ D
        return cls(mean, regularize_cov(cov, mean), DF, conditional)

    def block(self, idx, Z_rest_full=None):
        """Per-particle proposal mean ``(n, k)`` and scale Cholesky ``(k, k)`` for ``idx``."""
        idx = np.asarray(idx)
        rest = np.setdiff1d(np.arange(self.mean.size), idx)
        C_bb = self.cov[np.ix_(idx, idx)]
        if not self.conditional or rest.size == 0 or Z_rest_full is None:
            mean = np.broadcast_to(self.mean[idx], (1 if Z_rest_full is None else Z_rest_full.shape[0], idx.size))
            return mean, np.linalg.cholesky(C_bb)
        C_br = self.cov[np.ix_(idx, rest)]
        C_rr = self.cov[np.ix_(rest, rest)]
        A = np.linalg.solve(C_rr, C_br.T).T
        mean = self.mean[idx] + (Z_rest_full[:, rest] - self.mean[rest]) @ A.T
        cond = C_bb - A @ C_br.T
        cond = regularize_cov(0.5 * (cond + cond.T), self.mean[idx])
        return mean, np.linalg.cholesky(cond)


def regularize_cov(cov, mean=None) -> np.ndarray:
    """Symmetric PD version of ``cov``: zero variances get a tiny scale and
    correlation eigenvalues are floored at ``1e-8``."""
    cov = 0.5 * (cov + cov.T)
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    ref = np.abs(mean) if mean is not None else np.ones_like(sd)
    tiny = 1e-8 * np.maximum(ref, 1e-8)
    sd = np.where(sd > tiny, sd, tiny)
    R = cov / np.outer(sd, sd)
    np.fill_diagonal(R, 1.0)
    w, V = np.linalg.eigh(R)
    R = (V * np.maximum(w, COV_FLOOR)) @ V.T
    return R * np.outer(sd, sd)


def mvt_logpdf(x, mean, chol, df=DF) -> np.ndarray:
    """Log density of a multivariate t with scale ``chol chol'``; rows of ``x``."""
    k = chol.shape[0]
    z = solve_triangular(chol, (x - mean).T, lower=True, check_finite=False)
    q = np.sum(z * z, axis=0)
    logdet = np.sum(np.log(np.diag(chol)))
    return (gammaln((df + k) / 2) - gammaln(df / 2) - 0.5 * k * np.log(df * np.pi) - logdet
            - 0.5 * (df + k) * np.log1p(q / df))


def mvt_sample(rng, mean, chol, df=DF) -> np.ndarray:
    n, k = mean.shape
    z = rng.standard_normal((n, k)) @ chol.T
    w = np.sqrt(rng.chisquare(df, size=n) / df)
    return mean + z / w[:, None]


@dataclass
class MhStats:
    proposed: dict = field(default_factory=lambda: {b: 0 for b in BLOCK_ORDER})
    accepted: dict = field(default_factory=lambda: {b: 0 for b in BLOCK_ORDER})
    zero_density_rejects: int = 0

    def rates(self) -> dict:
        return {b: self.accepted[b] / self.proposed[b] for b in BLOCK_ORDER if self.proposed[b]}


def sigma_e2_step(state: ChainState, prior: Prior, phi: float, rng, stats: MhStats | None = None,
                  err_dim_proposal: int | None = None) -> ChainState:
    """Conjugate-kernel draw of ``sigma_e2`` with an exact MH correction.

    The proposal is IG(a, b) with ``a = (n_past + phi) d / 2`` and
    ``b = (SSQ_past + phi SSQ_new) / 2`` (floored at ``1e-12``). ``d`` defaults
    to the measurement-error dimension; ``err_dim_proposal`` substitutes a
    different count, and the correction keeps the chain exact either way.
    """
    d_prop = state.err_dim if err_dim_proposal is None else err_dim_proposal
    n_eff = state.n_past + phi
    a = 0.5 * n_eff * d_prop
    ssq = state.ssq_past + phi * state.ssq_new
    b = np.maximum(0.5 * ssq, BETA_FLOOR)
    n = state.Z.shape[0]
    with np.errstate(divide="ignore", over="ignore"):
        z_new = np.log(b / rng.gamma(a, 1.0, size=n))
    z_old = state.Z[:, 0]

    def log_w(z):
        # target (likelihood kernel + prior on log sigma_e2) over proposal density in z
        like = -0.5 * state.err_dim * n_eff * z - 0.5 * ssq * np.exp(-z)
        prop = a * np.log(b) - gammaln(a) - (a + 1) * z - b * np.exp(-z) + z
        return like + prior.logpdf_coords(z, 0) - prop

    with np.errstate(invalid="ignore", over="ignore"):
        log_alpha = log_w(z_new) - log_w(z_old)
    ok = np.isfinite(z_new) & np.isfinite(ssq)
    accept = ok & (np.log(rng.uniform(size=n)) < np.where(np.isnan(log_alpha), -np.inf, log_alpha))
    Z = state.Z.copy()
    Z[accept, 0] = z_new[accept]
    lp = state.logprior + np.where(accept, prior.logpdf_coords(Z[:, 0], 0) - prior.logpdf_coords(z_old, 0), 0.0)
    if stats is not None:
        stats.proposed["sigma_e2"] += n
        stats.accepted["sigma_e2"] += int(accept.sum())
    return ChainState(Z, state.ssq_past, state.ssq_new, state.pll_past, state.pll_new, lp,
                      state.n_past, state.err_dim)


def block_step(state: ChainState, lik: DtsmLikelihood, prior: Prior, phi: float, block: str,
               moments: ProposalMoments, rng, stats: MhStats | None = None) -> ChainState:
    """Independence Metropolis-Hastings update of one block for every particle."""
    idx = lik.layout.blocks[block]
    if idx.size == 0:
        return state
    mean, chol = moments.block(idx, state.Z)
    if mean.shape[0] != state.Z.shape[0]:
        mean = np.broadcast_to(mean, (state.Z.shape[0], idx.size))
    prop = mvt_sample(rng, mean, chol, moments.df)
    Zp = state.Z.copy()
    Zp[:, idx] = prop
    new = evaluate(lik, prior, Zp)
    q_new = mvt_logpdf(prop, mean, chol, moments.df)
    q_old = mvt_logpdf(state.Z[:, idx], mean, chol, moments.df)
    with np.errstate(invalid="ignore"):
        log_alpha = (new.target(phi) - q_new) - (state.target(phi) - q_old)
    log_alpha = np.where(np.isnan(log_alpha), -np.inf, log_alpha)
    zero_q = ~np.isfinite(q_old)
    log_alpha = np.where(zero_q, -np.inf, log_alpha)
    accept = np.log(rng.uniform(size=state.Z.shape[0])) < log_alpha
    if stats is not None:
        stats.proposed[block] += state.Z.shape[0]
        stats.accepted[block] += int(accept.sum())
        stats.zero_density_rejects += int(zero_q.sum())
    return state.replace(accept, new)


def sweep(state: ChainState, lik: DtsmLikelihood, prior: Prior, phi: float, moments: ProposalMoments,
          master_seed: int, key: tuple, stats: MhStats | None = None,
          err_dim_proposal: int | None = None) -> ChainState:
    """One pass over the four blocks; ``key`` identifies the random streams."""
    for b, block in enumerate(BLOCK_ORDER):
        rng = rngmod.stream(master_seed, *key, b)
        if block == "sigma_e2":
            state = sigma_e2_step(state, prior, phi, rng, stats, err_dim_proposal)
        else:
            state = block_step(state, lik, prior, phi, block, moments, rng, stats)
    return state


def run_chains(lik: DtsmLikelihood, prior: Prior, Z0, moments: ProposalMoments, n_iter: int, master_seed: int,
               burn_in: int = 0, thin: int = 1, err_dim_proposal: int | None = None):
    """Parallel full-data chains started at the rows of ``Z0``.

    Returns ``(draws, stats)`` with ``draws`` of shape ``(kept, n_chains, D)``.
    """
    state = evaluate(lik, prior, Z0)
    stats = MhStats()
    kept = []
    for it in range(n_iter):
        state = sweep(state, lik, prior, 1.0, moments, master_seed, (rngmod.CHAIN, it, 0, 0), stats,
                      err_dim_proposal)
        if it >= burn_in and (it - burn_in) % thin == 0:
            kept.append(state.Z.copy())
    return np.array(kept), stats
