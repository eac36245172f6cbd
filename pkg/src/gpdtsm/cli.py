"""Command-line entry point.

Verbs: ``simulate``, ``tune``, ``train``, ``forecast``, ``evaluate``,
``decompose`` and ``run``. Exit status is 0 on success, 1 on invalid input or
configuration and 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import pipeline as pl
from .config import RunConfig, load_config
from .errors import ConfigError, DTSMError, NumericalError, ValidationError
from .inference import checkpoint as ckpt
from .modelspec import parse_model_id
from .simulate import default_theta, simulate_panel, smooth_v, write_csvs

VERBS = ("simulate", "tune", "train", "forecast", "evaluate", "decompose", "run")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpdtsm", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", help="model id such as M1, M0, GP_110 or LM_011")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--T", type=int, default=200, help="simulate: number of transitions")
    p.add_argument("--macro-name", default="macro", help="simulate: macro column name")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> RunConfig:
    over = {"seed": args.seed, "model": args.model, "out_dir": args.out}
    if args.config:
        return load_config(args.config, **over)
    raise ConfigError(f"{args.verb} needs --config")


def cmd_simulate(args) -> None:
    """Synthetic panel with a smooth known macro effect on the active equations."""
    spec = parse_model_id(args.model or "GP_110")
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    theta = default_theta()
    scale = np.diag(theta.sigma_P_chol @ theta.sigma_P_chol.T) ** 0.5
    if spec.is_linear:
        theta.phi_pm = 0.5 * scale
    panel = simulate_panel(spec, theta, args.T, args.seed or 0,
                           v_func=(lambda m: smooth_v(m, scale)) if spec.is_gp else None)
    write_csvs(panel, os.path.join(out, "yields.csv"), os.path.join(out, "macros.csv"), args.macro_name)
    pl.write_csv(os.path.join(out, "truth_v.csv"), ["date", "macro_lag", "v1", "v2", "v3"],
                 [[panel.dates[s + 1], panel.macros[s], *panel.v[s]] for s in range(args.T)])


def _prepared(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return pl._staged("prepare", pl.prepare, cfg)


def cmd_tune(cfg) -> None:
    ctx = _prepared(cfg)
    pl.write_tune(cfg.out_dir, pl._staged("tune", pl.stage_tune, ctx))


def cmd_train(cfg) -> None:
    ctx = _prepared(cfg)
    tune = pl._staged("tune", pl.stage_tune, ctx)
    pl.write_tune(cfg.out_dir, tune)
    ps = pl._staged("train", pl.stage_train, ctx)
    ckpt.save(os.path.join(cfg.out_dir, "train.ckpt"), ps,
              {"stage": "train", "next_origin": ctx.t_train, "tune": tune, "sigma_K": ctx.sigma_K, "ledger": []})


def _resume_point(cfg, resume):
    path = resume or os.path.join(cfg.out_dir, "state.ckpt")
    if not os.path.exists(path):
        path = os.path.join(cfg.out_dir, "train.ckpt")
    if not os.path.exists(path):
        raise ConfigError("no checkpoint found; run 'train' first or pass --resume")
    return path


def cmd_forecast(cfg, resume) -> None:
    ctx = _prepared(cfg)
    ps, extra = ckpt.load(_resume_point(cfg, resume))
    ctx.sigma_K = None if extra.get("sigma_K") is None else np.asarray(extra["sigma_K"])
    t_from = int(extra.get("next_origin", ctx.t_train))
    ctx.audited.reveal(t_from)
    state = os.path.join(cfg.out_dir, "state.ckpt")
    ps, ledger = pl._staged("forecast", pl.stage_forecast, ctx, ps, [list(r) for r in extra.get("ledger", [])],
                            t_from, state, {"tune": extra.get("tune", {}), "sigma_K": ctx.sigma_K},
                            checkpoint_path=state)
    pl.write_ledger(cfg.out_dir, ledger)


def cmd_evaluate(cfg) -> None:
    ledger = pl.read_ledger(os.path.join(cfg.out_dir, "forecasts.csv"))
    tables = pl._staged("evaluate", pl.evaluate_ledger, ledger, cfg.rx_maturities, cfg.gamma, cfg.model,
                        cfg.nw_lags)
    pl.write_tables(cfg.out_dir, tables, cfg.rx_maturities, cfg.model)


def cmd_decompose(cfg, resume) -> None:
    ctx = _prepared(cfg)
    ps, extra = ckpt.load(_resume_point(cfg, resume))
    ctx.sigma_K = None if extra.get("sigma_K") is None else np.asarray(extra["sigma_K"])
    ctx.audited.reveal(ps.t_current)
    pl.write_decomposition(cfg.out_dir, pl._staged("decompose", pl.stage_decompose, ctx, ps, ps.t_current))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "simulate":
            cmd_simulate(args)
            return 0
        cfg = _config(args)
        if args.verb == "run":
            pl.run_pipeline(cfg, args.resume)
        elif args.verb == "tune":
            cmd_tune(cfg)
        elif args.verb == "train":
            cmd_train(cfg)
        elif args.verb == "forecast":
            cmd_forecast(cfg, args.resume)
        elif args.verb == "evaluate":
            cmd_evaluate(cfg)
        elif args.verb == "decompose":
            cmd_decompose(cfg, args.resume)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except DTSMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
