"""Independent normal priors on every transformed coordinate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..modelspec import ParamLayout

DEFAULT_SD = 10.0

# Weakly informative scales for monthly-decimal yield data. Under the flat
# default, the first date carries no transition information, so the shock
# scale stays near exp(0) and the sampler can settle in spurious modes where
# convexity is offset by the drift constant.
MONTHLY_PRESET = {
    "means": {"log_sigma_e2": -18.0, "L00": -7.0, "L11": -7.0, "L22": -7.0, "g1": 0.95,
              "log_gap12": -3.0, "log_gap23": -3.0},
    "sds": {"log_sigma_e2": 3.0, "L00": 2.0, "L11": 2.0, "L22": 2.0, "L10": 1e-3, "L20": 1e-3, "L21": 1e-3,
            "k_inf_Q": 1e-3, "g1": 0.1, "log_gap12": 1.0, "log_gap23": 1.0, "lambda1": 1.0, "lambda0": 1e-3,
            "phi_pm": 1e-3},
}
PRESETS = {"flat": {"means": {}, "sds": {}}, "monthly": MONTHLY_PRESET}


@dataclass
class Prior:
    names: list
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def from_layout(cls, layout: ParamLayout, means: dict | None = None, sd: float = DEFAULT_SD,
                    sds: dict | None = None) -> Prior:
        """Zero-mean, ``sd``-wide normals unless overridden per coordinate name.

        Override keys may name a coordinate exactly or a prefix such as
        ``phi_pm`` or ``log_ell``.
        """
        mean = np.zeros(layout.dim)
        scale = np.full(layout.dim, float(sd))
        for table, arr in ((means or {}, mean), (sds or {}, scale)):
            for key, val in table.items():
                hits = [i for i, n in enumerate(layout.names) if n == key or n.startswith(key + "_")]
                if not hits:
                    raise ConfigError(f"prior override {key!r} matches no coordinate of {layout.spec.model_id}")
                arr[hits] = float(val)
        if np.any(scale <= 0):
            raise ConfigError("prior sds must be positive")
        return cls(list(layout.names), mean, scale)

    @classmethod
    def from_preset(cls, layout: ParamLayout, preset: str = "flat", means: dict | None = None,
                    sds: dict | None = None, sd: float = DEFAULT_SD) -> Prior:
        """A named preset, restricted to the coordinates the layout has, plus explicit overrides."""
        if preset not in PRESETS:
            raise ConfigError(f"unknown prior preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset]

        def present(table):
            return {k: v for k, v in table.items()
                    if any(n == k or n.startswith(k + "_") for n in layout.names)}

        m = {**present(base["means"]), **(means or {})}
        s = {**present(base["sds"]), **(sds or {})}
        return cls.from_layout(layout, m, sd, s)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + self.sd * rng.standard_normal((n, self.dim))

    def logpdf_coords(self, Z, idx=None) -> np.ndarray:
        """Per-coordinate log densities, optionally restricted to ``idx``."""
        Z = np.asarray(Z, dtype=float)
        m, s = (self.mean, self.sd) if idx is None else (self.mean[idx], self.sd[idx])
        z = (Z - m) / s
        return -0.5 * z * z - np.log(s) - 0.5 * np.log(2 * np.pi)

    def logpdf(self, Z) -> np.ndarray:
        return np.sum(self.logpdf_coords(Z), axis=-1)
