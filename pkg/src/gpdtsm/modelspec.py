"""Model identifiers, the flat parameter layout and one-particle parameter records.

Each particle is a real vector ``Z`` in transformed coordinates:

====================  =========================================================
coordinate            meaning
====================  =========================================================
``log_sigma_e2``      log measurement-error variance
``L00 .. L22``        lower triangle of the PC shock Cholesky factor, row-major;
                      diagonal entries on log scale
``k_inf_Q``           risk-neutral drift constant
``g1``                largest risk-neutral eigenvalue
``log_gap12/23``      log of the successive eigenvalue gaps (keeps them ordered)
``log_ell_j``         GP length-scale of equation ``j`` (active blocks only)
``lambda0_j``         drift risk price (only if freed)
``lambda1_ij``        feedback risk prices (``lambda1_12`` by default)
``phi_pm_j``          linear macro loading of equation ``j`` (linear form only)
====================  =========================================================
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

N = 3
TRIL = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]
TRIL_DIAG = np.array([i == j for i, j in TRIL])

FORMS = ("none", "gp", "linear")


@dataclass(frozen=True)
class ModelSpec:
    """Which macro effects enter, in which form, and which risk prices are free."""

    model_id: str
    form: str = "none"
    mask: tuple = (False, False, False)
    risk: str = "lambda12"  # or "full"
    free_lambda0: bool = False

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigError(f"unknown model form {self.form!r}")
        if self.risk not in ("lambda12", "full"):
            raise ConfigError(f"unknown risk-price restriction {self.risk!r}")
        object.__setattr__(self, "mask", tuple(bool(b) for b in self.mask))

    @property
    def is_gp(self) -> bool:
        return self.form == "gp" and any(self.mask)

    @property
    def is_linear(self) -> bool:
        return self.form == "linear" and any(self.mask)

    @property
    def uses_macro(self) -> bool:
        return self.is_gp or self.is_linear

    @property
    def active(self) -> np.ndarray:
        return np.array(self.mask, dtype=bool)


_ID = re.compile(r"^(GP|LM)_([01])([01])([01])(\(.*\))?$")


def parse_model_id(model_id: str, free_lambda0: bool = False) -> ModelSpec:
    """``M0``, ``M1``, ``GP_ijk`` or ``LM_ijk`` (an optional ``(macro)`` suffix is ignored)."""
    mid = model_id.strip()
    if mid == "M0":
        return ModelSpec("M0", "none", (0, 0, 0), "full", True)
    if mid == "M1":
        return ModelSpec("M1", "none", (0, 0, 0), "lambda12", free_lambda0)
    m = _ID.match(mid)
    if m is None:
        raise ConfigError(f"cannot parse model id {model_id!r} (expected M0, M1, GP_ijk or LM_ijk)")
    form = "gp" if m.group(1) == "GP" else "linear"
    mask = tuple(c == "1" for c in m.group(2, 3, 4))
    return ModelSpec(mid, form, mask, "lambda12", free_lambda0)


class ParamLayout:
    """Coordinate names, MCMC blocks and constant selection matrices for a spec.

    Matrices are assembled from coordinates through the selection matrices
    (no scatter), so the decode is expressible in any array namespace.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        names = ["log_sigma_e2"]
        names += [f"L{i}{j}" for i, j in TRIL]
        names += ["k_inf_Q", "g1", "log_gap12", "log_gap23"]
        self.idx_sigma_e2 = 0
        self.idx_L = np.arange(1, 7)
        self.idx_q = np.arange(7, 11)

        ell_rows = [j for j in range(N) if spec.is_gp and spec.mask[j]]
        self.idx_ell = np.arange(len(names), len(names) + len(ell_rows))
        names += [f"log_ell_{j + 1}" for j in ell_rows]

        lam0_rows = list(range(N)) if spec.free_lambda0 or spec.risk == "full" else []
        self.idx_lam0 = np.arange(len(names), len(names) + len(lam0_rows))
        names += [f"lambda0_{j + 1}" for j in lam0_rows]

        lam1_pos = [(i, j) for i in range(N) for j in range(N)] if spec.risk == "full" else [(0, 1)]
        self.idx_lam1 = np.arange(len(names), len(names) + len(lam1_pos))
        names += [f"lambda1_{i + 1}{j + 1}" for i, j in lam1_pos]

        pm_rows = [j for j in range(N) if spec.is_linear and spec.mask[j]]
        self.idx_phipm = np.arange(len(names), len(names) + len(pm_rows))
        names += [f"phi_pm_{j + 1}" for j in pm_rows]

        self.names = names
        self.dim = len(names)

        self.sel_L = np.zeros((6, N * N))
        for k, (i, j) in enumerate(TRIL):
            self.sel_L[k, i * N + j] = 1.0
        self.sel_ell = _row_selector(ell_rows)
        self.sel_lam0 = _row_selector(lam0_rows)
        self.sel_lam1 = np.zeros((len(lam1_pos), N * N))
        for k, (i, j) in enumerate(lam1_pos):
            self.sel_lam1[k, i * N + j] = 1.0
        self.sel_phipm = _row_selector(pm_rows)
        self.ell_rows = ell_rows
        self.pm_rows = pm_rows

        pdyn = np.concatenate([self.idx_ell, self.idx_lam0, self.idx_lam1, self.idx_phipm]).astype(int)
        self.blocks = {
            "sigma_e2": np.array([0]),
            "sigma_P": self.idx_L,
            "q": self.idx_q,
            "pdyn": pdyn,
        }

    def index(self, name: str) -> int:
        return self.names.index(name)


def _row_selector(rows) -> np.ndarray:
    S = np.zeros((len(rows), N))
    for k, j in enumerate(rows):
        S[k, j] = 1.0
    return S


@dataclass
class Theta:
    """One particle in natural units."""

    sigma_e2: float
    k_inf_Q: float
    g_Q: np.ndarray
    sigma_P_chol: np.ndarray
    ell_K: np.ndarray = field(default_factory=lambda: np.ones(N))
    lambda0: np.ndarray = field(default_factory=lambda: np.zeros(N))
    lambda1: np.ndarray = field(default_factory=lambda: np.zeros((N, N)))
    phi_pm: np.ndarray = field(default_factory=lambda: np.zeros(N))

    @property
    def lambda12(self) -> float:
        return float(self.lambda1[0, 1])

    def qparams(self):
        from .termstructure import QParams

        return QParams(self.k_inf_Q, self.g_Q, self.sigma_P_chol, self.sigma_e2)


def encode(theta: Theta, layout: ParamLayout) -> np.ndarray:
    """Natural-unit parameters to transformed coordinates ``Z``."""
    z = np.zeros(layout.dim)
    z[0] = np.log(theta.sigma_e2)
    L = np.asarray(theta.sigma_P_chol, dtype=float)
    z[layout.idx_L] = [np.log(L[i, j]) if i == j else L[i, j] for i, j in TRIL]
    g = np.asarray(theta.g_Q, dtype=float)
    z[layout.idx_q] = [theta.k_inf_Q, g[0], np.log(g[0] - g[1]), np.log(g[1] - g[2])]
    z[layout.idx_ell] = np.log(np.asarray(theta.ell_K, dtype=float)[layout.ell_rows])
    z[layout.idx_lam0] = layout.sel_lam0 @ np.asarray(theta.lambda0, dtype=float)
    z[layout.idx_lam1] = layout.sel_lam1 @ np.asarray(theta.lambda1, dtype=float).reshape(-1)
    z[layout.idx_phipm] = layout.sel_phipm @ np.asarray(theta.phi_pm, dtype=float)
    return z


def decode_one(z, layout: ParamLayout) -> Theta:
    z = np.asarray(z, dtype=float)
    Lv = z[layout.idx_L]
    Lv = np.where(TRIL_DIAG, np.exp(Lv * TRIL_DIAG), Lv)
    k_inf, g1, lg12, lg23 = z[layout.idx_q]
    g2 = g1 - np.exp(lg12)
    ell = np.ones(N)
    ell[layout.ell_rows] = np.exp(z[layout.idx_ell])
    return Theta(
        sigma_e2=float(np.exp(z[0])),
        k_inf_Q=float(k_inf),
        g_Q=np.array([g1, g2, g2 - np.exp(lg23)]),
        sigma_P_chol=(Lv @ layout.sel_L).reshape(N, N),
        ell_K=ell,
        lambda0=z[layout.idx_lam0] @ layout.sel_lam0,
        lambda1=(z[layout.idx_lam1] @ layout.sel_lam1).reshape(N, N),
        phi_pm=z[layout.idx_phipm] @ layout.sel_phipm,
    )
