"""Synthetic panels drawn from the model, with the true GP path retained."""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .gpkernel import KernelHypers, build_block_K
from .gpou import build_p_dynamics
from .modelspec import ModelSpec, Theta
from .termstructure import QParams, null_space_rows, pricing_loadings

DEFAULT_MATURITIES = (1, 3, 6, 12, 24, 36, 48, 60, 84, 120)


def default_theta() -> Theta:
    """Plausible parameter values in monthly decimal units."""
    return Theta(
        sigma_e2=(0.0004 / 12) ** 2,
        k_inf_Q=1.0e-5,
        g_Q=np.array([0.997, 0.96, 0.85]),
        sigma_P_chol=np.array([[6e-4, 0.0, 0.0], [-1e-4, 2.5e-4, 0.0], [2e-5, -2e-5, 1.0e-4]]),
        lambda1=np.array([[0.0, -0.05, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
    )


def make_W(maturities) -> np.ndarray:
    """Orthonormal level/slope/curvature rows over the maturity grid."""
    m = np.asarray(maturities, dtype=float)
    x = 2.0 * (m - m.min()) / (m.max() - m.min()) - 1.0
    basis = np.column_stack([np.ones_like(x), x, x**2])
    Q, _ = np.linalg.qr(basis)
    W = Q.T
    big = np.argmax(np.abs(W), axis=1)
    return W * np.sign(W[np.arange(3), big])[:, None]


def monthly_dates(n: int, start=(2000, 1)) -> list[str]:
    y, mth = start
    out = []
    for k in range(n):
        yy, mm = divmod(mth - 1 + k, 12)
        out.append(_dt.date(y + yy, mm + 1, 1).isoformat())
    return out


def smooth_v(M, scale=(1.0, 1.0, 1.0)) -> np.ndarray:
    """A fixed smooth nonlinear test function of the macro, one column per equation."""
    M = np.asarray(M, dtype=float)
    cols = [np.sin(1.3 * M), np.tanh(M) - 0.3 * M**2 + 0.3, np.cos(0.8 * M) - 0.7]
    return np.column_stack(cols) * np.asarray(scale)


@dataclass
class SyntheticPanel:
    dates: list
    yields: np.ndarray  # monthly decimals, (T+1, J)
    macros: np.ndarray  # (T+1,)
    maturities: np.ndarray
    W: np.ndarray
    P: np.ndarray
    v: np.ndarray  # (T, 3) true v(M_{t-1}) entering P_t
    s: np.ndarray  # (T, 3) true P-residuals v + shocks
    truth: dict = field(default_factory=dict)


def simulate_panel(spec: ModelSpec, theta: Theta, T: int, seed: int, maturities=DEFAULT_MATURITIES,
                   sigma_K=None, v_func=None, macro_rho: float = 0.95, W=None) -> SyntheticPanel:
    """Draw ``T+1`` dates from the model.

    The macro follows a unit-variance AR(1). ``v`` is a GP draw with
    ``theta.ell_K`` and ``sigma_K`` on active blocks, or ``v_func(M)`` when
    given; the linear form uses ``theta.phi_pm`` instead. Measurement errors
    live in the null space of ``W`` so that ``W y_t = P_t`` holds exactly.
    """
    rng = np.random.default_rng(seed)
    mats = np.asarray(maturities, dtype=int)
    W = make_W(mats) if W is None else np.asarray(W, dtype=float)
    W_perp = null_space_rows(W)
    qp = QParams(theta.k_inf_Q, theta.g_Q, theta.sigma_P_chol, theta.sigma_e2)
    load = pricing_loadings(qp, mats, W)
    pd = build_p_dynamics(qp, load.mu_P_Q, load.phi_P_Q, theta.lambda12, theta.lambda0, theta.lambda1)

    M = np.empty(T + 1)
    M[0] = rng.standard_normal()
    for t in range(1, T + 1):
        M[t] = macro_rho * M[t - 1] + np.sqrt(1 - macro_rho**2) * rng.standard_normal()

    active = spec.active
    v = np.zeros((T, 3))
    if spec.is_linear:
        v = M[:-1, None] * (np.asarray(theta.phi_pm) * active)
    elif spec.is_gp:
        if v_func is not None:
            v = v_func(M[:-1]) * active
        else:
            hyp = KernelHypers(theta.ell_K, sigma_K, active)
            gp = build_block_K(M[:-1], hyp)
            for j in np.flatnonzero(active):
                Kj = gp.blocks[j] + 1e-10 * np.eye(T) * max(gp.blocks[j][0, 0], 1.0)
                v[:, j] = np.linalg.cholesky(Kj) @ rng.standard_normal(T)

    I = np.eye(3)
    try:
        P0 = np.linalg.solve(I - pd.phi_P_P, pd.mu_P_P)
    except np.linalg.LinAlgError:
        P0 = np.zeros(3)
    P = np.empty((T + 1, 3))
    P[0] = P0
    shocks = rng.standard_normal((T, 3)) @ pd.sigma_P_chol.T
    for t in range(1, T + 1):
        P[t] = pd.mu_P_P + pd.phi_P_P @ P[t - 1] + v[t - 1] + shocks[t - 1]
    eta = rng.standard_normal((T + 1, W_perp.shape[0])) * np.sqrt(theta.sigma_e2)
    yields = load.A_P + P @ load.B_P.T + eta @ W_perp
    truth = {
        "mu_P_P": pd.mu_P_P,
        "phi_P_P": pd.phi_P_P,
        "sigma_K": None if sigma_K is None else np.asarray(sigma_K, dtype=float),
        "theta": theta,
    }
    return SyntheticPanel(monthly_dates(T + 1), yields, M, mats, W, P, v, v + shocks, truth)


def write_csvs(panel: SyntheticPanel, yields_path, macros_path, macro_name: str = "macro") -> None:
    """Emit the CSV schema: annualized decimal yields, one macro column."""
    header = "date," + ",".join(f"m{m}" for m in panel.maturities)
    with open(yields_path, "w") as fh:
        fh.write(header + "\n")
        fh.writelines(d + "," + ",".join(repr(float(x)) for x in row) + "\n" for d, row in zip(panel.dates, panel.yields * 12.0))
    with open(macros_path, "w") as fh:
        fh.write(f"date,{macro_name}\n")
        fh.writelines(f"{d},{float(x)!r}\n" for d, x in zip(panel.dates, panel.macros))
