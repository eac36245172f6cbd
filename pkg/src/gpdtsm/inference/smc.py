"""Iterated batch importance sampling with hybrid adaptive tempering.

At each new date the particle weights are multiplied by the predictive
density of the new observation. When the effective sample size falls below
``alpha * N``, the new likelihood is instead introduced in stages
``0 < phi_1 < ... < 1``: each stage picks the largest exponent keeping the ESS
at the trigger (bisection), reweights, resamples and rejuvenates the
particles with MCMC sweeps targeting the partially tempered posterior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..errors import DegeneracyError
from ..likelihood import DtsmLikelihood
from . import rng as rngmod
from .mcmc import MhStats, ProposalMoments, evaluate, sweep
from .priors import Prior

log = logging.getLogger(__name__)


@dataclass
class IbisConfig:
    n_particles: int = 2000
    alpha: float = 0.7
    n_sweeps: int = 5
    resampling: str = "multinomial"  # or "systematic"
    bisect_tol: float = 0.01  # fraction of N
    bisect_max_iter: int = 50
    phi_fallback_step: float = 1e-3
    conditional_proposals: bool = True
    err_dim_proposal: int | None = None  # alternative sigma_e2 proposal dimension (compatibility)


@dataclass
class ParticleSystem:
    Z: np.ndarray
    logw: np.ndarray
    master_seed: int
    t_current: int = -1
    log_evidence: float = 0.0
    log_increments: list = field(default_factory=list)
    phi_history: list = field(default_factory=list)  # per date: list of tempering exponents
    counters: dict = field(default_factory=lambda: {"bisection_fallbacks": 0, "zero_evidence": 0,
                                                    "zero_likelihood_stages": 0,
                                                    "resample_moves": 0, "mh_proposed": 0,
                                                    "mh_accepted": 0, "zero_density_rejects": 0})

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Normalized weights."""
        return np.exp(self.logw - logsumexp(self.logw))

    def ess(self) -> float:
        return ess_log(self.logw)

    def mean(self) -> np.ndarray:
        return self.weights @ self.Z

    def sd(self) -> np.ndarray:
        w = self.weights
        m = w @ self.Z
        return np.sqrt(w @ (self.Z - m) ** 2)


def ess(weights) -> float:
    """``(sum w)^2 / sum w^2`` for non-negative weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    s = w.sum()
    if s <= 0:
        raise DegeneracyError("all weights are zero")
    w = w / w.max()
    return float(w.sum() ** 2 / np.sum(w * w))


def ess_log(logw) -> float:
    logw = np.asarray(logw, dtype=float)
    if not np.any(np.isfinite(logw)):
        raise DegeneracyError("all weights are zero")
    return float(np.exp(2 * logsumexp(logw) - logsumexp(2 * logw)))


def evidence_increment(logw, log_u) -> float:
    """``log m_t`` with ``m_t = sum w_i u_i / sum w_i`` (weights before the update)."""
    logw = np.asarray(logw, dtype=float)
    log_u = np.asarray(log_u, dtype=float)
    with np.errstate(invalid="ignore"):
        num = logsumexp(np.where(np.isfinite(logw), logw + log_u, -np.inf))
    return float(num - logsumexp(logw))


def resample(rng, logw, n: int | None = None, scheme: str = "multinomial") -> np.ndarray:
    """Ancestor indices drawn with probabilities proportional to the weights."""
    w = np.exp(logw - logsumexp(logw))
    n = w.size if n is None else n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    if scheme == "multinomial":
        u = rng.uniform(size=n)
    elif scheme == "systematic":
        u = (rng.uniform() + np.arange(n)) / n
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    return np.searchsorted(cdf, u, side="right").clip(max=w.size - 1)


def bisect_phi(logw_prev, log_u, phi_prev: float, trigger: float, tol: float, max_iter: int = 50):
    """Exponent ``phi`` in ``(phi_prev, 1]`` whose reweighting keeps the ESS at the trigger.

    The increment ``phi - phi_prev`` is bisected on a log scale between
    ``1e-300`` and ``1 - phi_prev``: early on, log-likelihood spreads across
    diffuse prior draws can exceed ``1e20``, which a linear bisection cannot
    resolve in 50 halvings. Stops once ``|ESS - trigger| <= tol``.

    Returns ``(phi, ok)``; ``ok`` is False when even the smallest increment
    drops the ESS below the trigger (e.g. too many zero-likelihood particles).
    """

    def ess_at(delta):
        with np.errstate(invalid="ignore"):
            lw = logw_prev + delta * log_u
        lw = np.where(np.isnan(lw), -np.inf, lw)
        return ess_log(lw) if np.any(np.isfinite(lw)) else 0.0

    span = 1.0 - phi_prev
    if ess_at(span) >= trigger:
        return 1.0, True
    lo, hi = np.log(1e-300), np.log(span)
    if ess_at(np.exp(lo)) < trigger:
        return phi_prev, False
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        e = ess_at(np.exp(mid))
        if e >= trigger:
            lo = mid
            if e - trigger <= tol:
                break
        else:
            hi = mid
    phi = phi_prev + np.exp(lo)
    if phi <= phi_prev:
        return phi_prev, False
    return float(min(phi, 1.0)), True


def init_particles(prior: Prior, n: int, master_seed: int) -> ParticleSystem:
    Z = prior.sample(rngmod.stream(master_seed, rngmod.INIT), n)
    return ParticleSystem(Z, np.zeros(n), master_seed)


def ibis_step(ps: ParticleSystem, lik: DtsmLikelihood, prior: Prior, cfg: IbisConfig) -> ParticleSystem:
    """Advance the particle system to the newest date of ``lik.data``."""
    t = lik.data.T
    n = ps.n
    state = evaluate(lik, prior, ps.Z)
    log_u = state.loglik_new()
    log_u = np.where(np.isnan(log_u), -np.inf, log_u)
    logm = evidence_increment(ps.logw, log_u)
    if not np.isfinite(logm):
        ps.counters["zero_evidence"] += 1
        raise DegeneracyError(f"all incremental likelihoods vanish at t={t}")
    ps.log_evidence += logm
    ps.log_increments.append(logm)

    trigger = cfg.alpha * n
    with np.errstate(invalid="ignore"):
        updated = ps.logw + log_u
    updated = np.where(np.isnan(updated), -np.inf, updated)
    phis = []
    if ess_log(updated) >= trigger:
        ps.logw = updated
    else:
        logw_prev = ps.logw
        phi_prev = 0.0
        stage = 0
        stats = MhStats()
        while phi_prev < 1.0:
            phi, ok = bisect_phi(logw_prev, log_u, phi_prev, trigger, cfg.bisect_tol * n, cfg.bisect_max_iter)
            if not ok:
                # zero-likelihood particles cap the ESS below the trigger for every phi;
                # aim at the trigger fraction of the surviving particles instead
                alive = np.isfinite(log_u) & np.isfinite(logw_prev)
                if 0 < alive.sum() < n:
                    phi, ok = bisect_phi(logw_prev[alive], log_u[alive], phi_prev, cfg.alpha * alive.sum(),
                                         cfg.bisect_tol * alive.sum(), cfg.bisect_max_iter)
                    ps.counters["zero_likelihood_stages"] += int(ok)
            if not ok:
                phi = min(1.0, phi_prev + cfg.phi_fallback_step)
                ps.counters["bisection_fallbacks"] += 1
                log.warning("tempering bisection collapsed at t=%d phi'=%.6g; stepping to %.6g", t, phi_prev, phi)
            with np.errstate(invalid="ignore"):
                lw = logw_prev + (phi - phi_prev) * log_u
            lw = np.where(np.isnan(lw), -np.inf, lw)
            idx = resample(rngmod.stream(ps.master_seed, rngmod.RESAMPLE, t, stage), lw, n, cfg.resampling)
            state = state.take(idx)
            moments = ProposalMoments.from_particles(state.Z, conditional=cfg.conditional_proposals)
            for k in range(cfg.n_sweeps):
                state = sweep(state, lik, prior, phi, moments, ps.master_seed,
                              (rngmod.JITTER, t, stage, k), stats, cfg.err_dim_proposal)
            log_u = state.loglik_new()
            log_u = np.where(np.isnan(log_u), -np.inf, log_u)
            logw_prev = np.zeros(n)
            phi_prev = phi
            phis.append(phi)
            stage += 1
        ps.logw = np.zeros(n)
        ps.counters["resample_moves"] += stage
        ps.counters["mh_proposed"] += sum(stats.proposed.values())
        ps.counters["mh_accepted"] += sum(stats.accepted.values())
        ps.counters["zero_density_rejects"] += stats.zero_density_rejects
    ps.Z = state.Z
    ps.t_current = t
    ps.phi_history.append(phis)
    return ps


def run_ibis(make_lik, prior: Prior, cfg: IbisConfig, t_start: int, t_end: int, ps: ParticleSystem | None = None,
             master_seed: int = 0, callback=None) -> ParticleSystem:
    """Run dates ``t_start..t_end``; ``make_lik(t)`` returns the likelihood on window ``0..t``.

    Starts from the prior when ``ps`` is None. ``callback(ps, lik)`` runs
    after each date (checkpointing, forecasting).
    """
    if ps is None:
        ps = init_particles(prior, cfg.n_particles, master_seed)
    for t in range(t_start, t_end + 1):
        lik = make_lik(t)
        ps = ibis_step(ps, lik, prior, cfg)
        log.debug("t=%d stages=%d ess=%.1f", t, len(ps.phi_history[-1]), ps.ess())
        if callback is not None:
            callback(ps, lik)
    return ps
