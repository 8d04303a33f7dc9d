import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from precondfm.errors import ConvergenceError, DefinitenessError, DimensionError, SampleSizeError, SymmetryError
from precondfm.linalg import SpectralMatrix, cond_number, inv_sqrt, sample_covariance, sqrtm, sym_eig

from conftest import random_spd


def rot(deg):
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


class TestSymEig:
    def test_identity(self):
        sp = sym_eig(np.eye(3))
        assert np.allclose(sp.eigvals, 1.0)
        assert np.allclose(sp.eigvecs.T @ sp.eigvecs, np.eye(3), atol=1e-14)
        assert np.allclose(sp.reconstruct(), np.eye(3), atol=1e-15)

    def test_diagonal_is_axis_aligned(self):
        sp = sym_eig(np.diag([100.0, 1.0]))
        assert np.allclose(sp.eigvals, [1.0, 100.0])
        assert np.allclose(np.abs(sp.eigvecs), [[0, 1], [1, 0]])

    def test_rotated_construction(self):
        R = rot(30)
        sp = sym_eig(R @ np.diag([2.0, 5.0]) @ R.T)
        assert np.allclose(sp.eigvals, [2.0, 5.0], atol=1e-10)

    def test_matches_lapack(self, rng):
        for d in (2, 5, 16, 40):
            S = random_spd(rng, d)
            sp = sym_eig(S)
            ref = np.linalg.eigvalsh(S)
            assert np.allclose(sp.eigvals, ref, rtol=1e-11, atol=1e-12)

    def test_deterministic(self, rng):
        S = random_spd(rng, 6)
        a, b = sym_eig(S), sym_eig(S)
        assert np.array_equal(a.eigvals, b.eigvals) and np.array_equal(a.eigvecs, b.eigvecs)

    def test_indefinite_allowed(self):
        sp = sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.allclose(sp.eigvals, [-1.0, 1.0])
        assert not sp.is_positive_definite

    def test_errors(self):
        with pytest.raises(DimensionError):
            sym_eig(np.ones((2, 3)))
        with pytest.raises(DimensionError):
            sym_eig(np.zeros((0, 0)))
        with pytest.raises(SymmetryError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_sweep_cap(self, rng):
        with pytest.raises(ConvergenceError):
            sym_eig(random_spd(rng, 8), max_sweeps=1)

    def test_read_only(self):
        sp = sym_eig(np.eye(2))
        with pytest.raises(ValueError):
            sp.eigvals[0] = 3.0

    @given(st.integers(2, 16), st.integers(0, 2**31 - 1))
    def test_reconstruction_and_orthogonality(self, d, seed):
        S = random_spd(np.random.default_rng(seed), d)
        sp = sym_eig(S)
        assert np.linalg.norm(sp.reconstruct() - S) / np.linalg.norm(S) < 1e-10
        assert np.linalg.norm(sp.eigvecs.T @ sp.eigvecs - np.eye(d)) < 1e-10
        assert np.all(np.diff(sp.eigvals) >= 0)


class TestSpectralMatrix:
    def test_from_eig_sorts(self):
        sp = SpectralMatrix.from_eig(np.array([3.0, 1.0]), np.eye(2))
        assert np.allclose(sp.eigvals, [1.0, 3.0])
        assert np.allclose(sp.entries, np.diag([3.0, 1.0]))

    def test_apply_function(self):
        sp = SpectralMatrix.diagonal([4.0, 9.0])
        assert np.allclose(sp.apply_function(np.sqrt), np.diag([2.0, 3.0]))

    def test_require_pd(self):
        with pytest.raises(DefinitenessError):
            SpectralMatrix.diagonal([1.0, 0.0]).require_positive_definite()


class TestCondNumber:
    def test_values(self):
        assert cond_number(np.eye(4)) == 1.0
        assert cond_number(np.diag([1.0, 100.0])) == pytest.approx(100.0)
        assert cond_number(np.diag([0.5, 25.25])) == pytest.approx(50.5, rel=1e-14)

    def test_not_pd(self):
        with pytest.raises(DefinitenessError):
            cond_number(np.diag([1.0, -1.0]))

    @given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, alpha):
        S = random_spd(np.random.default_rng(seed), 4)
        assert cond_number(alpha * S) == pytest.approx(cond_number(S), rel=1e-9)


class TestInvSqrt:
    def test_examples(self):
        assert np.allclose(inv_sqrt(np.eye(3)), np.eye(3))
        assert np.allclose(inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]))

    def test_singular_needs_ridge(self):
        with pytest.raises(DefinitenessError):
            inv_sqrt(np.diag([1.0, 0.0]))
        assert np.allclose(inv_sqrt(np.diag([1.0, 0.0]), ridge=1.0), np.diag([1 / np.sqrt(2), 1.0]))

    def test_sqrtm(self, rng):
        S = random_spd(rng, 4)
        R = sqrtm(S)
        assert np.allclose(R @ R, S, rtol=1e-10)

    @given(st.integers(0, 2**31 - 1), st.integers(2, 8))
    def test_whitens_and_commutes(self, seed, d):
        S = random_spd(np.random.default_rng(seed), d)
        M = inv_sqrt(S)
        assert np.linalg.norm(M @ S @ M - np.eye(d)) < 1e-9
        assert np.linalg.norm(M @ S - S @ M) < 1e-9
        assert np.allclose(M, M.T) and np.all(np.linalg.eigvalsh(M) > 0)


class TestSampleCovariance:
    def test_zero(self):
        assert np.array_equal(sample_covariance(np.zeros((5, 3))), np.zeros((3, 3)))

    def test_hand_example(self):
        assert np.array_equal(sample_covariance([[1.0, 0.0], [-1.0, 0.0]]), np.diag([1.0, 0.0]))

    def test_centered(self):
        C = sample_covariance([[2.0, 1.0], [0.0, 1.0]], centered=True)
        assert np.allclose(C, np.diag([1.0, 0.0]))

    def test_monte_carlo(self, rng):
        X = rng.standard_normal((100_000, 2)) * np.sqrt([1.0, 100.0])
        C = sample_covariance(X)
        assert abs(C[0, 0] - 1) < 0.05 and abs(C[1, 1] - 100) < 5 and abs(C[0, 1]) < 0.5

    def test_errors(self):
        with pytest.raises(SampleSizeError):
            sample_covariance([[1.0, 2.0]])
        with pytest.raises(DimensionError):
            sample_covariance([[1.0, 2.0], [1.0]])

    @pytest.mark.parametrize("d", [2, 4, 8])
    def test_whitened_points_are_isotropic(self, rng, d):
        S = random_spd(rng, d, kappa=100.0)
        X = rng.standard_normal((100_000, d)) @ sqrtm(S)
        Y = X @ inv_sqrt(sample_covariance(X))
        assert cond_number(sample_covariance(Y)) < 1.2
