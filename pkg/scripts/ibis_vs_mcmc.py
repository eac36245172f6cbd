"""Compare IBIS posterior moments with long parallel MCMC on a simulated no-macro panel.

Monte Carlo error of IBIS comes from replicate runs with different seeds; MCMC error
from the spread of independent chain means. Prints one line per coordinate.

    python3 scripts/ibis_vs_mcmc.py --particles 1000 --chains 100 --iters 2000
"""

import argparse
import time

import numpy as np

from gpdtsm.inference.mcmc import mvt_sample, run_chains
from gpdtsm.inference.priors import Prior
from gpdtsm.inference.smc import IbisConfig, run_ibis
from gpdtsm.inference.tuning import mle_and_hessian
from gpdtsm.likelihood import DtsmLikelihood, ModelData
from gpdtsm.modelspec import ParamLayout, parse_model_id
from gpdtsm.simulate import default_theta, simulate_panel
from gpdtsm.termstructure import null_space_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=60)
    ap.add_argument("--particles", type=int, default=1000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[7, 8, 9, 10])
    ap.add_argument("--chains", type=int, default=100)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--burn", type=int, default=200)
    ap.add_argument("--prior", default="monthly", choices=["flat", "monthly"])
    a = ap.parse_args()

    spec, mats = parse_model_id("M1"), [3, 12, 24, 60, 120]
    sp = simulate_panel(spec, default_theta(), a.T, 3, maturities=mats)
    W_perp = null_space_rows(sp.W)

    def make(t):
        return DtsmLikelihood(spec, ModelData(sp.yields[: t + 1], mats, sp.W, W_perp))

    layout = ParamLayout(spec)
    prior = Prior.from_preset(layout, a.prior)
    t0 = time.perf_counter()
    runs = [run_ibis(make, prior, IbisConfig(n_particles=a.particles), 0, a.T, master_seed=s) for s in a.seeds]
    means, sds = np.array([r.mean() for r in runs]), np.array([r.sd() for r in runs])
    print(f"IBIS: {len(runs)} runs in {time.perf_counter() - t0:.0f}s")

    lik = make(a.T)
    mle = mle_and_hessian(lik, prior)
    Z0 = mvt_sample(np.random.default_rng(0), np.broadcast_to(mle.z, (a.chains, mle.z.size)),
                    np.linalg.cholesky(mle.cov))
    draws, stats = run_chains(lik, prior, Z0, mle.moments, a.iters + a.burn, master_seed=3, burn_in=a.burn)
    print(f"MCMC: {draws.shape[0] * draws.shape[1]} draws, acceptance {stats.rates()}, "
          f"total {time.perf_counter() - t0:.0f}s")

    cm = draws.mean(0)
    se_mc_m, se_mc_s = cm.std(0, ddof=1) / np.sqrt(a.chains), draws.std(0).std(0, ddof=1) / np.sqrt(a.chains)
    m_mc, sd_mc = cm.mean(0), draws.reshape(-1, layout.dim).std(0)
    se_ib_m, se_ib_s = means.std(0, ddof=1), sds.std(0, ddof=1)
    print(f"{'coordinate':12s} {'mean IBIS':>12s} {'mean MCMC':>12s} {'z':>6s} {'sd IBIS':>10s} {'sd MCMC':>10s} {'z':>6s}")
    for i, name in enumerate(layout.names):
        zm = (means[0, i] - m_mc[i]) / np.hypot(se_ib_m[i], se_mc_m[i])
        zs = (sds[0, i] - sd_mc[i]) / np.hypot(se_ib_s[i], se_mc_s[i])
        print(f"{name:12s} {means[0, i]:12.5g} {m_mc[i]:12.5g} {zm:6.2f} {sds[0, i]:10.4g} {sd_mc[i]:10.4g} {zs:6.2f}")


if __name__ == "__main__":
    main()
