import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpdtsm.errors import DataError, ValidationError
from gpdtsm.gpkernel import KernelHypers, build_block_K, build_cross_K, sqexp

finite = st.floats(-50, 50, allow_nan=False)


def test_sqexp_zero_distance():
    assert sqexp(1.7, 1.7, 0.3, 2.0) == 4.0


def test_sqexp_at_root_two_length_scales():
    ell = 0.7
    assert abs(sqexp(0.0, ell * np.sqrt(2), ell, 1.0) - np.exp(-1)) < 1e-15
    assert abs(sqexp(0.0, ell * np.sqrt(2), ell, 1.0) - 0.3679) < 1e-4


@given(finite, finite, st.floats(0.01, 10))
def test_sqexp_zero_signal(a, b, ell):
    assert sqexp(a, b, ell, 0.0) == 0.0


@given(finite, finite, st.floats(0.01, 10), st.floats(0.01, 10))
def test_sqexp_bounded_and_symmetric(a, b, ell, sigma):
    k = sqexp(a, b, ell, sigma)
    assert 0.0 <= k <= sigma**2
    assert k == sqexp(b, a, ell, sigma)


def test_sqexp_vector_inputs_use_euclidean_norm():
    assert abs(sqexp([0.0, 0.0], [3.0, 4.0], 5.0, 1.0) - np.exp(-0.5)) < 1e-15


def test_sqexp_rejects_nonpositive_length_scale():
    with pytest.raises(ValidationError):
        sqexp(0.0, 1.0, 0.0, 1.0)


def test_all_blocks_inactive_give_zero_matrix():
    hyp = KernelHypers([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], [False, False, False])
    K = build_block_K(np.random.default_rng(0).normal(size=4), hyp).K
    np.testing.assert_array_equal(K, np.zeros((12, 12)))


def test_constant_macro_gives_constant_block():
    hyp = KernelHypers([0.3, 1.0, 1.0], [1.5, 2.0, 3.0], [True, False, True])
    gp = build_block_K(np.full(4, 0.2), hyp)
    np.testing.assert_allclose(gp.blocks[0], 1.5**2 * np.ones((4, 4)), rtol=1e-15)
    np.testing.assert_array_equal(gp.blocks[1], 0.0)
    np.testing.assert_allclose(gp.K[8:, 8:], 9.0 * np.ones((4, 4)), rtol=1e-15)


def test_block_entries_match_scalar_kernel():
    m = np.array([0.3, -1.1, 0.8])
    hyp = KernelHypers([0.5, 1.3, 2.0], [0.7, 1.1, 0.2], [True, True, True])
    K = build_block_K(m, hyp).K
    for j in range(3):
        for a in range(3):
            for b in range(3):
                want = sqexp(m[a], m[b], hyp.ell_K[j], hyp.sigma_K[j])
                assert abs(K[3 * j + a, 3 * j + b] - want) < 1e-15
    off = K.copy()
    for j in range(3):
        off[3 * j:3 * j + 3, 3 * j:3 * j + 3] = 0
    assert not off.any()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=12), st.floats(0.05, 5), st.floats(0.0, 3))
def test_block_matrix_is_symmetric_psd(m, ell, sigma):
    hyp = KernelHypers([ell, 2 * ell, ell], [sigma, sigma, 0.5 * sigma], [True, False, True])
    K = build_block_K(np.array(m), hyp).K
    np.testing.assert_array_equal(K, K.T)
    jitter = 1e-10 * max(1.0, sigma**2)
    assert np.linalg.eigvalsh(K + jitter * np.eye(K.shape[0])).min() > 0


def test_non_finite_macro_rejected():
    hyp = KernelHypers([1.0] * 3, [1.0] * 3, [True] * 3)
    with pytest.raises(DataError, match="position 2"):
        build_block_K(np.array([0.0, 1.0, np.inf]), hyp)
    with pytest.raises(DataError):
        build_cross_K(np.array([0.0, 1.0]), np.nan, hyp)


def test_cross_terms_masked_block():
    hyp = KernelHypers([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], [True, False, True])
    k0, kn = build_cross_K(np.array([0.1, 0.5]), 0.3, hyp)
    np.testing.assert_array_equal(kn[:, 1], 0.0)
    assert k0[1, 1] == 0.0
    np.testing.assert_array_equal(k0, np.diag([1.0, 0.0, 9.0]))


def test_cross_terms_at_training_input():
    m = np.array([0.1, 0.5, -0.4])
    hyp = KernelHypers([0.4, 1.0, 2.0], [1.2, 0.5, 3.0], [True, True, True])
    _, kn = build_cross_K(m, m[1], hyp)
    for j in range(3):
        assert kn[3 * j + 1, j] == hyp.sigma_K[j] ** 2


def test_cross_terms_match_scalar_kernel():
    m = np.array([0.1, 0.5, -0.4])
    hyp = KernelHypers([0.4, 1.0, 2.0], [1.2, 0.5, 3.0], [True, True, True])
    k0, kn = build_cross_K(m, 0.9, hyp)
    for j in range(3):
        for t in range(3):
            assert abs(kn[3 * j + t, j] - sqexp(m[t], 0.9, hyp.ell_K[j], hyp.sigma_K[j])) < 1e-15
        for i in range(3):
            if i != j:
                np.testing.assert_array_equal(kn[3 * j:3 * j + 3, i], 0.0)
