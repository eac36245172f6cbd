"""Recovery of a known smooth macro effect and of the GP signal scale on simulated panels.

    python3 scripts/recovery.py --T 200 --seeds 0 1 2
"""

import argparse

import numpy as np

from gpdtsm.inference.mcmc import mvt_sample, run_chains
from gpdtsm.inference.priors import Prior
from gpdtsm.inference.tuning import mle_and_hessian, tune_sigma_K
from gpdtsm.likelihood import DtsmLikelihood, ModelData
from gpdtsm.modelspec import ParamLayout, parse_model_id
from gpdtsm.simulate import default_theta, simulate_panel, smooth_v
from gpdtsm.termstructure import null_space_rows

MATS = [3, 12, 24, 60, 120]


def panel_data(sp):
    x = (sp.macros - sp.macros.mean()) / sp.macros.std(ddof=1)
    return ModelData(sp.yields, MATS, sp.W, null_space_rows(sp.W), x)


def function_recovery(spec, T, seed, chains=16, iters=60):
    """Correlation between the posterior-mean macro effect and the generating function."""
    th = default_theta()
    scale = np.sqrt(np.diag(th.sigma_P_chol @ th.sigma_P_chol.T))
    sp = simulate_panel(spec, th, T, seed, maturities=MATS, v_func=lambda m: smooth_v(m, scale))
    data = panel_data(sp)
    tun = tune_sigma_K(data, spec, seed=0, n_starts=3)
    lik = DtsmLikelihood(spec, data, tun.sigma_K)
    lay, base = lik.layout, ParamLayout(parse_model_id("M1"))
    z0 = np.zeros(lay.dim)
    for i, name in enumerate(base.names):
        z0[lay.index(name)] = tun.z_mle[i]
    z0[lay.idx_ell] = np.log(tun.ell[lay.ell_rows])
    prior = Prior.from_preset(lay, "monthly")
    mle = mle_and_hessian(lik, prior, z0=z0, n_starts=1)
    Z0 = mvt_sample(np.random.default_rng(0), np.broadcast_to(mle.z, (chains, mle.z.size)),
                    np.linalg.cholesky(mle.cov))
    draws, _ = run_chains(lik, prior, Z0, mle.moments, iters, master_seed=1, burn_in=iters // 3)
    v_hat = lik.posterior_v(draws.reshape(-1, lay.dim)[::4])[0].mean(0)
    return [float(np.corrcoef(v_hat[:, j], sp.v[:, j])[0, 1]) for j in np.flatnonzero(spec.active)]


def scale_recovery(spec, T, seed, c0):
    """Tuned signal multiplier over the one implied by the generating signal and residual scales."""
    th = default_theta()
    th.ell_K = np.array([1.0, 1.5, 1.0])
    scale = np.sqrt(np.diag(th.sigma_P_chol @ th.sigma_P_chol.T))
    sk = c0 * scale * spec.active
    sp = simulate_panel(spec, th, T, seed, maturities=MATS, sigma_K=sk)
    tun = tune_sigma_K(panel_data(sp), spec, seed=0, n_starts=3)
    act = np.flatnonzero(spec.active)
    c_gen = float(np.exp(np.mean(np.log(sk[act] / sp.s[:, act].std(0, ddof=1)))))
    return tun.c, c_gen


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="GP_110")
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--seeds", type=int, nargs="+", default=[11])
    ap.add_argument("--c0", type=float, nargs="+", default=[1.0, 2.0])
    a = ap.parse_args()
    spec = parse_model_id(a.model)
    for seed in a.seeds:
        corr = function_recovery(spec, a.T, seed)
        print(f"seed {seed}: corr(v_hat, v) = {', '.join(f'{c:.3f}' for c in corr)}", flush=True)
        for c0 in a.c0:
            c, c_gen = scale_recovery(spec, a.T, seed, c0)
            print(f"  c0 {c0}: c_hat {c:.3f}, c_gen {c_gen:.3f}, ratio {c / c_gen:.3f}", flush=True)


if __name__ == "__main__":
    main()
