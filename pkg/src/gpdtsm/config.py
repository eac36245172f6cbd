"""Run configuration as a flat ``key = value`` text file with ``#`` comments.

Prior overrides use dotted keys: ``prior_mean.L00 = -7`` or
``prior_sd.phi_pm = 0.001``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError
from .modelspec import parse_model_id


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _opt_int(text):
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _opt_str(text):
    return None if text.strip().lower() in ("", "none") else text.strip()


@dataclass
class RunConfig:
    model: str = "GP_100"
    macro_name: str | None = None
    yields_csv: str = "yields.csv"
    macros_csv: str | None = None
    out_dir: str = "out"
    maturities: tuple = ()  # empty: every column of the yields file
    rx_maturities: tuple = (24, 36, 48, 60, 84, 120)
    rx_fill: str = "interpolate"  # none | interpolate | model
    train_end: str = ""
    test_end: str | None = None
    seed: int = 0
    n_particles: int = 2000
    alpha: float = 0.7
    n_sweeps: int = 5
    resampling: str = "multinomial"
    bisect_tol: float = 0.01
    bisect_max_iter: int = 50
    phi_fallback_step: float = 1e-3
    conditional_proposals: bool = True
    prior_preset: str = "flat"
    prior_sd: float = 10.0
    prior_means: dict = field(default_factory=dict)
    prior_sds: dict = field(default_factory=dict)
    tune_starts: int = 5
    gamma: float = 3.0
    weight_bound: float = 10.0
    nw_lags: int | None = None  # None: floor(4 (T/100)^(2/9))
    checkpoint_every: int = 1

    def validate(self) -> RunConfig:
        spec = parse_model_id(self.model)
        if spec.uses_macro and not self.macros_csv:
            raise ConfigError(f"model {self.model} needs macros_csv")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.n_particles < 2 or self.n_sweeps < 0:
            raise ConfigError("need n_particles >= 2 and n_sweeps >= 0")
        if self.resampling not in ("multinomial", "systematic"):
            raise ConfigError(f"unknown resampling {self.resampling!r}")
        if self.rx_fill not in ("none", "interpolate", "model"):
            raise ConfigError(f"unknown rx_fill {self.rx_fill!r}")
        if self.gamma <= 1.0:
            raise ConfigError("gamma must exceed 1")
        if not self.train_end:
            raise ConfigError("train_end is required")
        if any(n < 1 for n in self.rx_maturities):
            raise ConfigError("rx_maturities must be positive month counts")
        return self

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in ("prior_means", "prior_sds"):
                prefix = "prior_mean" if f.name == "prior_means" else "prior_sd"
                lines += [f"{prefix}.{k} = {val!r}" for k, val in sorted(v.items())]
                continue
            if isinstance(v, tuple):
                text = ",".join(str(x) for x in v)
            elif v is None:
                text = "none"
            else:
                text = str(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "model": str, "macro_name": _opt_str, "yields_csv": str, "macros_csv": _opt_str, "out_dir": str,
    "maturities": _ints, "rx_maturities": _ints, "rx_fill": str, "train_end": str, "test_end": _opt_str,
    "seed": int, "n_particles": int, "alpha": float, "n_sweeps": int, "resampling": str, "bisect_tol": float,
    "bisect_max_iter": int, "phi_fallback_step": float, "conditional_proposals": _bool, "prior_preset": str,
    "prior_sd": float, "tune_starts": int, "gamma": float, "weight_bound": float, "nw_lags": _opt_int,
    "checkpoint_every": int,
}


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse the flat format; keyword ``overrides`` (non-None) win over the file."""
    values: dict = {"prior_means": {}, "prior_sds": {}}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key.startswith("prior_mean."):
                values["prior_means"][key.split(".", 1)[1]] = float(val)
            elif key.startswith("prior_sd."):
                values["prior_sds"][key.split(".", 1)[1]] = float(val)
            elif key in _PARSERS:
                values[key] = _PARSERS[key](val)
            else:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(f"config line {lineno}: bad value {val!r} for {key!r}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, **overrides)
