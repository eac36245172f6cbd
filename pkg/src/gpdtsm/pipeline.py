"""End-to-end run: tune the GP signal scale, learn on the training window, forecast
out of sample one month at a time, then evaluate and decompose.

Every stage reads data through :class:`~gpdtsm.data.AuditedPanel`, so an
out-of-sample step only sees dates up to its forecast origin. Output files
are written with ``repr`` floats in a fixed order, so equal seeds give
byte-identical results.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import evaluation as ev
from .config import RunConfig
from .data import AuditedPanel, PanelData, StandardizationMeta, load_panel
from .errors import DataError, DTSMError
from .forecast import (
    observed_excess_returns,
    predict_excess_returns,
    required_maturities,
)
from .inference import checkpoint as ckpt
from .inference import rng as rngmod
from .inference.priors import Prior
from .inference.smc import IbisConfig, ParticleSystem, ibis_step, init_particles
from .inference.tuning import tune_sigma_K
from .likelihood import DtsmLikelihood, ModelData
from .modelspec import ModelSpec, ParamLayout, parse_model_id
from .termstructure import extract_pcs

log = logging.getLogger(__name__)

LEDGER_FIELDS = ("origin", "date", "maturity", "rx_obs", "rx_model", "rx_eh", "w_model", "w_eh", "r_model", "r_eh",
                 "invalid")
N_BAND_DRAWS = 200


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


@dataclass
class Context:
    cfg: RunConfig
    spec: ModelSpec
    panel: PanelData
    audited: AuditedPanel
    t_train: int
    t_end: int
    std: StandardizationMeta | None
    W: np.ndarray
    W_perp: np.ndarray
    prior: Prior
    sigma_K: np.ndarray | None = None

    def model_macros(self, upto: int):
        m = self.audited.macros(upto)
        if m is None or not self.spec.uses_macro:
            return None
        return self.std.transform(m)

    def model_data(self, upto: int) -> ModelData:
        return ModelData(self.audited.yields(upto), self.panel.maturities, self.W, self.W_perp,
                         self.model_macros(upto))

    def lik(self, upto: int) -> DtsmLikelihood:
        return DtsmLikelihood(self.spec, self.model_data(upto), self.sigma_K,
                              required_maturities(self.cfg.rx_maturities))

    def ibis_config(self) -> IbisConfig:
        c = self.cfg
        return IbisConfig(c.n_particles, c.alpha, c.n_sweeps, c.resampling, c.bisect_tol, c.bisect_max_iter,
                          c.phi_fallback_step, c.conditional_proposals)


def prepare(cfg: RunConfig) -> Context:
    """Load data, fix the split, standardize on the training window and freeze the PC loadings."""
    spec = parse_model_id(cfg.model)
    panel = load_panel(cfg.yields_csv, cfg.macros_csv if spec.uses_macro or cfg.macros_csv else None,
                       cfg.maturities or None, cfg.macro_name)
    t_train = panel.index_of(cfg.train_end)
    t_end = panel.n_dates - 1 if cfg.test_end is None else panel.index_of(cfg.test_end)
    if t_train < len(panel.maturities) + 1:
        raise DataError(f"training window ends at row {t_train}; too short for {len(panel.maturities)} maturities")
    if t_end <= t_train:
        raise DataError("test window is empty: test_end must follow train_end")
    audited = AuditedPanel(panel, t_train)
    std = None
    if spec.uses_macro:
        if panel.macros is None:
            raise DataError(f"model {spec.model_id} needs a macro series")
        std = StandardizationMeta.fit(audited.macros(t_train), apply=spec.is_gp)
    pcs = extract_pcs(audited.yields(t_train), panel.maturities)
    layout = ParamLayout(spec)
    prior = Prior.from_preset(layout, cfg.prior_preset, cfg.prior_means, cfg.prior_sds, cfg.prior_sd)
    return Context(cfg, spec, panel, audited, t_train, t_end, std, pcs.W, pcs.W_perp, prior)


def _staged(name, fn, *args, checkpoint_path=None):
    try:
        return fn(*args)
    except DTSMError as exc:
        where = f" (resume from {checkpoint_path})" if checkpoint_path and os.path.exists(checkpoint_path) else ""
        exc.args = (f"stage {name}: {exc.args[0] if exc.args else exc}{where}",) + exc.args[1:]
        exc.stage = name
        raise


# -- stages --------------------------------------------------------------------------------


def stage_tune(ctx: Context) -> dict:
    """GP signal calibration on the training window; empty for non-GP forms."""
    if not (ctx.spec.is_gp and np.any(ctx.spec.active)):
        return {}
    res = tune_sigma_K(ctx.model_data(ctx.t_train), ctx.spec, seed=ctx.cfg.seed, n_starts=ctx.cfg.tune_starts)
    ctx.sigma_K = res.sigma_K
    return {"sigma_K": res.sigma_K, "c": res.c, "ell": res.ell, "resid_sd": res.resid_sd, "loglik": res.loglik}


def stage_train(ctx: Context) -> ParticleSystem:
    """IBIS from the prior over the training window ``0..t_train``."""
    cfg = ctx.ibis_config()
    ps = init_particles(ctx.prior, cfg.n_particles, ctx.cfg.seed)
    for t in range(ctx.t_train + 1):
        ps = ibis_step(ps, ctx.lik(t), ctx.prior, cfg)
    return ps


def forecast_step(ctx: Context, ps: ParticleSystem, t: int) -> list:
    """Forecast ``rx_{t,t+1}`` at origin ``t``, then reveal ``t+1`` and score. Returns ledger rows."""
    cfg = ctx.cfg
    rx_mats = tuple(cfg.rx_maturities)
    lik = ctx.lik(t)
    draws = predict_excess_returns(ps.Z, ps.logw, lik, rx_mats, rngmod.stream(cfg.seed, rngmod.PREDICT, t))
    past = observed_excess_returns(ctx.audited.yields(t), ctx.panel.maturities, rx_mats, cfg.rx_fill)
    if 1 not in lik.data.maturities:
        raise DataError("the one-month yield is required for the riskless rate; add m1 to the panel")
    rf = lik.data.yields[t, list(lik.data.maturities).index(1)]
    ctx.audited.reveal(t + 1)
    realized = observed_excess_returns(ctx.audited.yields(t + 1), ctx.panel.maturities, rx_mats, cfg.rx_fill)[t]
    rows = []
    for j, n in enumerate(rx_mats):
        hist = past[:, j]
        eh = float(hist.mean())
        w_m = ev.optimal_weight(draws.rx_draws[:, j], draws.weights, cfg.gamma, rf, cfg.weight_bound)
        w_b = ev.optimal_weight(hist, None, cfg.gamma, rf, cfg.weight_bound)
        r_m = float(ev.portfolio_gross_return(w_m, realized[j], rf) - 1.0)
        r_b = float(ev.portfolio_gross_return(w_b, realized[j], rf) - 1.0)
        rows.append([t, ctx.panel.dates[t], n, realized[j], draws.point_rx[j], eh, w_m, w_b, r_m, r_b, draws.invalid])
    return rows


def stage_forecast(ctx: Context, ps: ParticleSystem, ledger: list, t_from: int, checkpoint_path=None,
                   extra=None) -> tuple:
    """Out-of-sample loop from origin ``t_from`` to ``t_end - 1``, checkpointing as it goes."""
    cfg = ctx.ibis_config()
    for t in range(t_from, ctx.t_end):
        ledger.extend(forecast_step(ctx, ps, t))
        ps = ibis_step(ps, ctx.lik(t + 1), ctx.prior, cfg)
        if checkpoint_path and ((t + 1 - ctx.t_train) % max(ctx.cfg.checkpoint_every, 1) == 0 or t + 1 == ctx.t_end):
            ckpt.save(checkpoint_path, ps, {**(extra or {}), "stage": "forecast", "next_origin": t + 1,
                                            "ledger": ledger})
    return ps, ledger


def evaluate_ledger(ledger, rx_maturities, gamma, model_id, lags=None) -> dict:
    """R²_os, DM/CW and CER against the historical-mean benchmark, per maturity."""
    tables = {"r2os": [], "dmcw_stat": [], "dmcw_p": [], "stars": [], "cer": []}
    for n in rx_maturities:
        rows = [r for r in ledger if int(r[2]) == int(n)]
        obs = np.array([r[3] for r in rows], dtype=float)
        fm = np.array([r[4] for r in rows], dtype=float)
        fb = np.array([r[5] for r in rows], dtype=float)
        rm = np.array([r[8] for r in rows], dtype=float)
        rb = np.array([r[9] for r in rows], dtype=float)
        tables["r2os"].append(ev.r2_os(obs - fm, obs - fb))
        if obs.size >= 10:
            d = ev.cw_differential(obs - fm, obs - fb, fm, fb)
            stat, p = ev.dm_cw_test(d, lags)
        else:
            stat, p = float("nan"), float("nan")
        tables["dmcw_stat"].append(stat)
        tables["dmcw_p"].append(p)
        tables["stars"].append(ev.stars(p))
        tables["cer"].append(ev.cer_relative(rm, rb, gamma))
    return tables


def stage_decompose(ctx: Context, ps: ParticleSystem, t: int) -> dict:
    """Posterior-mean GP (or linear) component, its PC-spanned/hidden split and band data."""
    if not ctx.spec.uses_macro:
        return {}
    lik = ctx.lik(t)
    dec = lik.decode(ps.Z)
    w = ps.weights
    macros = lik.data.macros
    rng = rngmod.stream(ctx.cfg.seed, rngmod.PREDICT, t, 1)
    if ctx.spec.is_gp:
        mean, _ = lik.posterior_v(ps.Z, t)
        idx = rng.choice(ps.n, size=min(N_BAND_DRAWS, ps.n), p=w)
        draws = lik.posterior_v_draws(ps.Z[idx], rng, t)
    else:
        v = dec.phi_pm[:, None, :] * macros[None, :t, None]
        mean = v
        idx = rng.choice(ps.n, size=min(N_BAND_DRAWS, ps.n), p=w)
        draws = v[idx]
    v_hat = np.einsum("n,nsj->sj", w, mean)
    P = lik.data.P[1 : t + 1]
    m_lag = macros[:t]
    dcmp = ev.rp_decompose(v_hat, P, m_lag)
    hidden_draws = np.stack([ev.rp_decompose(d, P, m_lag).hidden for d in draws]) if len(draws) else draws
    q = lambda a, p: np.quantile(a, p, axis=0)
    return {
        "decomposition": dcmp,
        "dates": ctx.panel.dates[1 : t + 1],
        "macro_lag": m_lag,
        "v_band": (q(draws, 0.025), q(draws, 0.975)),
        "hidden_band": (q(hidden_draws, 0.025), q(hidden_draws, 0.975)),
    }


# -- output --------------------------------------------------------------------------------


def write_tune(out, tune: dict):
    rows = []
    if tune:
        for j in range(3):
            rows.append([j + 1, tune["sigma_K"][j], tune["ell"][j], tune["resid_sd"][j], tune["c"]])
    write_csv(os.path.join(out, "tune.csv"), ["equation", "sigma_K", "ell", "resid_sd", "c"], rows)


def write_ledger(out, ledger):
    write_csv(os.path.join(out, "forecasts.csv"), LEDGER_FIELDS, ledger)


def read_ledger(path) -> list:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        if tuple(head) != LEDGER_FIELDS:
            raise DataError(f"{path} is not a forecast ledger")
        out = []
        for row in r:
            out.append([int(row[0]), row[1], int(row[2])] + [float(x) for x in row[3:10]] + [int(row[10])])
    return out


def write_tables(out, tables, rx_maturities, model_id):
    head = ["model", "statistic"] + [f"m{n}" for n in rx_maturities]
    rows = [[model_id, k] + list(tables[k]) for k in ("r2os", "dmcw_stat", "dmcw_p", "stars")]
    write_csv(os.path.join(out, "r2os.csv"), head, rows)
    write_csv(os.path.join(out, "cer.csv"), ["model"] + [f"m{n}" for n in rx_maturities],
              [[model_id] + list(tables["cer"])])


def write_decomposition(out, dres):
    if not dres:
        return
    d = dres["decomposition"]
    rows = [[j + 1, comp, d.adj_r2[comp][j]] for comp in ("v", "spanned", "hidden") for j in range(3)]
    write_csv(os.path.join(out, "decomposition.csv"), ["equation", "component", "adj_r2"], rows)
    rows = []
    vlo, vhi = dres["v_band"]
    hlo, hhi = dres["hidden_band"]
    for s, date in enumerate(dres["dates"]):
        for j in range(3):
            rows.append([date, j + 1, dres["macro_lag"][s], d.v_hat[s, j], vlo[s, j], vhi[s, j], d.hidden[s, j],
                         hlo[s, j], hhi[s, j]])
    write_csv(os.path.join(out, "v_scatter.csv"),
              ["date", "equation", "macro_lag", "v_mean", "v_lo", "v_hi", "hidden_mean", "hidden_lo", "hidden_hi"],
              rows)


def write_evidence(out, ps: ParticleSystem, dates):
    rows = [[dates[i], inc, len(ph)] for i, (inc, ph) in enumerate(zip(ps.log_increments, ps.phi_history))]
    write_csv(os.path.join(out, "evidence.csv"), ["date", "log_increment", "tempering_stages"], rows)


def write_summary(out, ctx: Context, ps: ParticleSystem):
    summary = {
        "model": ctx.spec.model_id,
        "train_end": ctx.panel.dates[ctx.t_train],
        "test_end": ctx.panel.dates[ctx.t_end],
        "log_evidence": ps.log_evidence,
        "counters": ps.counters,
        "standardization": None if ctx.std is None else {"mean": ctx.std.mean, "sd": ctx.std.sd,
                                                          "applied": ctx.std.applied},
        "audit_violations": [list(v) for v in ctx.audited.violations],
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- driver --------------------------------------------------------------------------------


def run_pipeline(cfg: RunConfig, resume: str | None = None) -> str:
    """Full run; returns the output directory."""
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    ctx = _staged("prepare", prepare, cfg)
    state_path = os.path.join(out, "state.ckpt")
    if resume:
        ps, extra = ckpt.load(resume)
        ctx.sigma_K = None if extra.get("sigma_K") is None else np.asarray(extra["sigma_K"])
        tune = extra.get("tune", {})
        ledger = [list(r) for r in extra.get("ledger", [])]
        t_from = int(extra.get("next_origin", ctx.t_train))
        ctx.audited.reveal(t_from)
    else:
        tune = _staged("tune", stage_tune, ctx)
        ps = _staged("train", stage_train, ctx)
        ledger, t_from = [], ctx.t_train
        ckpt.save(os.path.join(out, "train.ckpt"), ps,
                  {"stage": "train", "next_origin": t_from, "tune": tune, "sigma_K": ctx.sigma_K, "ledger": []})
    write_tune(out, tune)
    extra = {"tune": tune, "sigma_K": ctx.sigma_K}
    ps, ledger = _staged("forecast", stage_forecast, ctx, ps, ledger, t_from, state_path, extra,
                         checkpoint_path=state_path)
    write_ledger(out, ledger)
    tables = _staged("evaluate", evaluate_ledger, ledger, cfg.rx_maturities, cfg.gamma, ctx.spec.model_id,
                     cfg.nw_lags)
    write_tables(out, tables, cfg.rx_maturities, ctx.spec.model_id)
    dres = _staged("decompose", stage_decompose, ctx, ps, ctx.t_end)
    write_decomposition(out, dres)
    write_evidence(out, ps, ctx.panel.dates)
    write_summary(out, ctx, ps)
    return out
