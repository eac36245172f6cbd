import numpy as np
import pytest
from _helpers import gaussian_condition, gp_joint_oracle, random_chol
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from gpdtsm.errors import ConditioningError
from gpdtsm.gpkernel import KernelHypers, build_block_K, build_cross_K
from gpdtsm.gpou import (
    PDynParams,
    build_p_dynamics,
    clip_psd,
    marginal_cov,
    p_loglik,
    p_loglik_grad,
    posterior_v,
    predictive_pc,
    residuals,
    stack_rows,
)
from gpdtsm.termstructure import QParams


def _hypers(rng, active=(True, True, True)):
    return KernelHypers(rng.uniform(0.4, 2.0, 3), rng.uniform(0.5, 2.0, 3) * 1e-3, active)


@pytest.mark.parametrize("T", [2, 3])
@pytest.mark.parametrize("seed", range(4))
def test_gp_algebra_matches_joint_gaussian(T, seed):
    rng = np.random.default_rng(seed)
    hyp = _hypers(rng, active=(True, seed % 2 == 0, True))
    L = random_chol(rng, scale=1e-3)
    m = rng.normal(size=T)
    M_T = rng.normal()
    S = rng.normal(0, 2e-3, 3 * T)
    _, _, _, base, S_map, V_map, P_map = gp_joint_oracle(m, M_T, hyp, L)
    C_ss = S_map @ base @ S_map.T
    gp = build_block_K(m, hyp)

    oracle_ll = multivariate_normal(np.zeros(3 * T), C_ss).logpdf(S)
    assert abs(p_loglik(S, gp, L) - oracle_ll) < 1e-8 * max(1.0, abs(oracle_ll))

    mean_o, cov_o = gaussian_condition(V_map @ base @ S_map.T, C_ss, V_map @ base @ V_map.T, S)
    mean, cov = posterior_v(S, gp, L)
    np.testing.assert_allclose(mean, mean_o, rtol=0, atol=1e-8 * np.abs(S).max())
    np.testing.assert_allclose(cov, cov_o, rtol=0, atol=1e-8 * np.abs(cov_o).max())

    mu, phi = rng.normal(0, 1e-4, 3), np.diag([0.98, 0.9, 0.7])
    pd = PDynParams(mu, phi, 0.0, L)
    P_T = rng.normal(0, 0.01, 3)
    k0, kn = build_cross_K(m, M_T, hyp)
    pred = predictive_pc(P_T, S, gp, k0, kn, pd)
    pm_o, pc_o = gaussian_condition(P_map @ base @ S_map.T, C_ss, P_map @ base @ P_map.T, S)
    np.testing.assert_allclose(pred.mean, mu + phi @ P_T + pm_o, rtol=0, atol=1e-8 * np.abs(P_T).max())
    np.testing.assert_allclose(pred.cov, pc_o, rtol=0, atol=1e-8 * np.abs(pc_o).max())
    np.testing.assert_allclose(pred.gp_correction, pm_o, rtol=0, atol=1e-10 * np.abs(S).max())


# -- dynamics and residual layout ------------------------------------------------


def test_zero_risk_price_keeps_risk_neutral_dynamics():
    qp = QParams(0.0, [0.99, 0.9, 0.8], np.eye(3))
    mu, phi = np.array([1e-4, 2e-4, 3e-4]), np.arange(9.0).reshape(3, 3) / 20
    pd = build_p_dynamics(qp, mu, phi, 0.0)
    np.testing.assert_array_equal(pd.mu_P_P, mu)
    np.testing.assert_array_equal(pd.phi_P_P, phi)


def test_risk_price_moves_only_first_second_entry():
    qp = QParams(0.0, [0.99, 0.9, 0.8], np.eye(3))
    phi = np.arange(9.0).reshape(3, 3) / 20
    pd = build_p_dynamics(qp, np.zeros(3), phi, 0.05)
    diff = pd.phi_P_P - phi
    assert diff[0, 1] == pytest.approx(0.05, abs=1e-16)
    diff[0, 1] = 0
    assert not diff.any()
    assert pd.phi_P_P[0, 1] - phi[0, 1] == pytest.approx(pd.lambda12, abs=1e-16)


def test_noiseless_var_has_zero_residuals():
    rng = np.random.default_rng(1)
    mu, phi = rng.normal(0, 1e-3, 3), np.diag([0.9, 0.5, 0.2]) + 0.01
    P = np.zeros((6, 3))
    P[0] = rng.normal(size=3)
    for t in range(1, 6):
        P[t] = mu + phi @ P[t - 1]
    r = residuals(P, PDynParams(mu, phi, 0.0, np.eye(3)))
    np.testing.assert_allclose(r.S, 0.0, atol=1e-15)


def test_identity_feedback_hand_case():
    P = np.array([[1.0, 2.0, 3.0], [1.5, 2.5, 2.0], [0.0, 1.0, 4.0]])
    mu = np.array([0.1, 0.2, 0.3])
    r = residuals(P, PDynParams(mu, np.eye(3), 0.0, np.eye(3)))
    np.testing.assert_allclose(r.rows[0], [1.5 - 0.1 - 1.0, 2.5 - 0.2 - 2.0, 2.0 - 0.3 - 3.0], atol=1e-15)
    np.testing.assert_allclose(r.rows[1], [0.0 - 0.1 - 1.5, 1.0 - 0.2 - 2.5, 4.0 - 0.3 - 2.0], atol=1e-15)


def test_stacked_layout_is_equation_major():
    rows = np.arange(12.0).reshape(4, 3)
    S = stack_rows(rows)
    for j in range(3):
        for t in range(4):
            assert S[j * 4 + t] == rows[t, j]


# -- marginal likelihood ----------------------------------------------------------


def test_switched_off_gp_is_iid_var_density():
    rng = np.random.default_rng(2)
    L = random_chol(rng)
    rows = rng.normal(0, 1e-3, (5, 3))
    want = sum(multivariate_normal(np.zeros(3), L @ L.T).logpdf(r) for r in rows)
    got = p_loglik(stack_rows(rows), np.zeros((15, 15)), L)
    assert abs(got - want) < 1e-9 * abs(want)


def test_doubling_residuals_quadruples_quadratic_term():
    rng = np.random.default_rng(3)
    hyp, L = _hypers(rng), random_chol(rng)
    gp = build_block_K(rng.normal(size=4), hyp)
    S = rng.normal(0, 1e-3, 12)
    c = p_loglik(np.zeros(12), gp, L)
    q1 = p_loglik(S, gp, L) - c
    q2 = p_loglik(2 * S, gp, L) - c
    assert abs(q2 - 4 * q1) < 1e-9 * abs(q2)


def test_conditioning_failure_is_reported():
    with pytest.raises(ConditioningError):
        p_loglik(np.zeros(6), np.full((6, 6), np.nan), np.eye(3))
    with pytest.raises(ConditioningError) as info:
        p_loglik(np.zeros(6), -10 * np.eye(6), np.eye(3))
    assert info.value.condition is not None


# -- posterior of the GP values ------------------------------------------------------


def test_posterior_without_signal_is_degenerate():
    rng = np.random.default_rng(4)
    mean, cov = posterior_v(rng.normal(size=9), np.zeros((9, 9)), random_chol(rng))
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_array_equal(cov, 0.0)


def test_posterior_mean_tracks_residuals_under_strong_signal():
    rng = np.random.default_rng(5)
    L = random_chol(rng, scale=1e-3)
    S = rng.normal(0, 1e-3, 15)
    sd = S.std()
    hyp = KernelHypers([1.0, 1.0, 1.0], [1e3 * sd] * 3, [True, True, True])
    # inputs many length-scales apart so the prior is close to sigma^2 I
    mean, _ = posterior_v(S, build_block_K(np.arange(5) * 10.0, hyp), L)
    assert np.max(np.abs(mean - S)) < 1e-2 * np.max(np.abs(S))


# -- predictive ---------------------------------------------------------------


def test_predictive_without_gp_is_plain_var():
    rng = np.random.default_rng(6)
    L = random_chol(rng)
    mu, phi = rng.normal(size=3), rng.normal(size=(3, 3))
    P_T = rng.normal(size=3)
    hyp = KernelHypers([1.0] * 3, [1.0] * 3, [False] * 3)
    m = rng.normal(size=4)
    k0, kn = build_cross_K(m, 0.3, hyp)
    pred = predictive_pc(P_T, rng.normal(size=12), build_block_K(m, hyp), k0, kn, PDynParams(mu, phi, 0.0, L))
    np.testing.assert_allclose(pred.mean, mu + phi @ P_T, rtol=1e-15)
    np.testing.assert_allclose(pred.cov, L @ L.T, rtol=1e-14)


def test_predictive_far_from_training_macros():
    rng = np.random.default_rng(7)
    L = random_chol(rng)
    hyp = KernelHypers([0.5] * 3, [2e-3] * 3, [True] * 3)
    m = rng.uniform(-1, 1, 4)
    M_far = m.max() + 20 * 0.5
    k0, kn = build_cross_K(m, M_far, hyp)
    pd = PDynParams(np.zeros(3), np.eye(3) * 0.9, 0.0, L)
    pred = predictive_pc(np.ones(3), rng.normal(0, 1e-3, 12), build_block_K(m, hyp), k0, kn, pd)
    np.testing.assert_allclose(pred.gp_correction, 0.0, atol=1e-6)
    np.testing.assert_allclose(pred.cov, np.diag([4e-6] * 3) + L @ L.T, atol=1e-6)


def test_clip_psd():
    A = np.diag([1.0, 0.5, -1e-10])
    out = clip_psd(A)
    assert np.linalg.eigvalsh(out).min() >= 0
    np.testing.assert_allclose(out, np.diag([1.0, 0.5, 0.0]), atol=1e-12)
    with pytest.raises(ValueError):
        clip_psd(np.diag([1.0, -0.1]))


# -- hyper-parameter gradient ---------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_hyper_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    active = np.array([True, seed % 2 == 0, True])
    m = rng.normal(size=6)
    L = random_chol(rng)
    S = rng.normal(0, 1e-3, 18)
    ell, sig = rng.uniform(0.5, 2.0, 3), rng.uniform(0.5, 2.0, 3) * 1e-3

    def f(le, ls):
        return p_loglik(S, build_block_K(m, KernelHypers(np.exp(le), np.exp(ls), active)), L)

    g_ell, g_sig = p_loglik_grad(S, m, KernelHypers(ell, sig, active), L)
    h = 1e-5
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd_ell = (f(np.log(ell) + e, np.log(sig)) - f(np.log(ell) - e, np.log(sig))) / (2 * h)
        fd_sig = (f(np.log(ell), np.log(sig) + e) - f(np.log(ell), np.log(sig) - e)) / (2 * h)
        if active[j]:
            assert g_ell[j] == pytest.approx(fd_ell, rel=1e-5, abs=1e-7)
            assert g_sig[j] == pytest.approx(fd_sig, rel=1e-5, abs=1e-7)
        else:
            assert g_ell[j] == 0.0 and g_sig[j] == 0.0


def test_marginal_cov_layout():
    L = np.array([[1.0, 0, 0], [0.5, 1.0, 0], [0.0, 0.2, 1.0]])
    C = marginal_cov(np.zeros((6, 6)), L)
    om = L @ L.T
    for i in range(3):
        for j in range(3):
            np.testing.assert_array_equal(C[2 * i:2 * i + 2, 2 * j:2 * j + 2], om[i, j] * np.eye(2))
