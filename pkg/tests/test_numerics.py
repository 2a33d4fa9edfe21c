import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from rppi.numerics import (SeededRng, SingularMatrixError, SparseMatrix, cholesky_psd,
                           sample_gaussian, sparse_matvec, spectral_radius)


def test_rng_streams_replay_and_differ():
    a = SeededRng(123, 4).standard_normal(50)
    b = SeededRng(123, 4).standard_normal(50)
    c = SeededRng(123, 5).standard_normal(50)
    assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    # independent streams: sample correlation is small
    x = SeededRng(9, 0).standard_normal(100_000)
    y = SeededRng(9, 1).standard_normal(100_000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.02


def test_substream_matches_direct_construction():
    assert_array_equal(SeededRng(7, 0).substream(3).uniform(size=5), SeededRng(7, 3).uniform(size=5))


def test_sparse_matrix_rejects_duplicates_and_out_of_range():
    with pytest.raises(ValueError):
        SparseMatrix((2, 2), [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        SparseMatrix((2, 2), [2], [0], [1.0])


def test_sample_gaussian_degenerate_cases():
    assert_array_equal(sample_gaussian(SeededRng(0), np.zeros(3), np.zeros((3, 3))), np.zeros(3))
    assert_array_equal(sample_gaussian(SeededRng(0), [5.0], [[0.0]]), [5.0])
    with pytest.raises(ValueError):
        sample_gaussian(SeededRng(0), np.zeros(2), np.eye(3))


def test_sample_gaussian_moments():
    rng = SeededRng(42, 0)
    draws = np.array([sample_gaussian(rng, np.zeros(2), np.eye(2)) for _ in range(100_000)])
    assert np.all(np.abs(draws.mean(axis=0)) < 0.02)
    assert np.all(np.abs(draws.var(axis=0) - 1.0) < 0.05)


def test_sample_gaussian_is_deterministic():
    chol = np.array([[1.0, 0.0], [0.5, 2.0]])
    a = sample_gaussian(SeededRng(3, 1), [1.0, 2.0], chol)
    b = sample_gaussian(SeededRng(3, 1), [1.0, 2.0], chol)
    assert_array_equal(a, b)


def test_cholesky_identity_and_hand_case():
    L, eps = cholesky_psd(np.eye(4))
    assert_array_equal(L, np.eye(4))
    assert eps == 0.0
    L, eps = cholesky_psd(np.array([[4.0, 2.0], [2.0, 3.0]]))
    assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)
    assert eps == 0.0


def test_cholesky_needs_jitter_for_roundoff_negative_eigenvalue():
    # Gram matrix of nearly dependent vectors, then shift its smallest eigenvalue to -1e-12
    rng = np.random.default_rng(0)
    v = rng.standard_normal((3, 6))
    v[2] = v[0] + v[1]
    g = v @ v.T
    w, q = np.linalg.eigh(g)
    w[0] = -1e-12
    a = (q * w) @ q.T
    a = 0.5 * (a + a.T)
    L, eps = cholesky_psd(a)
    scale = np.trace(a) / 3
    assert eps > 0
    assert eps <= 1e-10 * scale * (1 + 1e-12)
    assert np.linalg.norm(L @ L.T - (a + eps * np.eye(3))) <= 1e-10 * np.linalg.norm(a)
    assert np.all(np.triu(L, 1) == 0) and np.all(np.diag(L) >= 0)


def test_cholesky_rejects_asymmetric_and_indefinite():
    with pytest.raises(ValueError):
        cholesky_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(SingularMatrixError):
        cholesky_psd(np.diag([1.0, -1.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_cholesky_reconstruction_property(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n + 2))
    gram = a @ a.T
    L, eps = cholesky_psd(gram)
    assert np.linalg.norm(L @ L.T - (gram + eps * np.eye(n))) <= 1e-10 * np.linalg.norm(gram)


def test_spectral_radius_simple_cases():
    assert_allclose(spectral_radius(0.5 * np.eye(10)).value, 0.5, rtol=1e-6)
    assert_allclose(spectral_radius(np.diag([0.1, -0.9, 0.3])).value, 0.9, rtol=1e-6)
    assert spectral_radius(np.zeros((4, 4))).value == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_spectral_radius_matches_dense_eigensolver(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (50, 50)) * (rng.random((50, 50)) < 0.3)
    res = spectral_radius(SparseMatrix.from_dense(a))
    ref = np.max(np.abs(np.linalg.eigvals(a)))
    assert res.converged
    assert abs(res.value - ref) <= 1e-6 * ref


def test_spectral_radius_handles_rotation():
    # complex-conjugate dominant pair: plain power iteration never settles here
    th = 0.7
    a = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]) * 0.8
    assert_allclose(spectral_radius(a).value, 0.8, rtol=1e-6)


def test_spectral_radius_reports_nonconvergence():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((60, 60))
    res = spectral_radius(a, max_iters=1)
    assert not res.converged
    assert res.iterations == 1
    assert res.value > 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 2**32 - 1))
def test_spectral_radius_scales_linearly(c, seed):
    a = np.random.default_rng(seed).uniform(-1, 1, (20, 20))
    base = spectral_radius(a).value
    assert_allclose(spectral_radius(c * a).value, c * base, rtol=2e-6)


def test_sparse_matvec_identity_empty_and_oracle():
    x = np.arange(5.0)
    assert_array_equal(sparse_matvec(SparseMatrix.from_dense(np.eye(5)), x), x)
    assert_array_equal(sparse_matvec(SparseMatrix.empty(3, 5), x), np.zeros(3))
    rng = np.random.default_rng(1)
    a = rng.standard_normal((30, 40)) * (rng.random((30, 40)) < 0.2)
    v = rng.standard_normal(40)
    assert_allclose(sparse_matvec(SparseMatrix.from_dense(a), v), a @ v, rtol=1e-12, atol=1e-12)
    with pytest.raises(ValueError):
        sparse_matvec(SparseMatrix.from_dense(a), np.zeros(3))


def test_sparse_density_and_round_trip():
    a = np.diag([1.0, 2.0, 3.0])
    s = SparseMatrix.from_dense(a)
    assert s.nnz == 3
    assert_allclose(s.density, 3 / 9)
    assert_array_equal(s.to_dense(), a)
    assert_array_equal(s.scaled(2.0).to_dense(), 2 * a)
