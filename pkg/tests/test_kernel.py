import numpy as np
import pytest

from gpmatch.kernel import GramMatrix, KernelSpec, eval_kernel, gram, regularized_solve

# exp(1 / (0.2 sqrt(1 + 1e-6))): cosine of a unit vector with itself under
# the epsilon-regularized normalization
SELF_KERNEL_UNIT = 148.4127880704208


class TestKernelSpec:
    def test_tau_bounds(self):
        with pytest.raises(ValueError):
            KernelSpec(tau=0.01)
        with pytest.raises(ValueError):
            KernelSpec(tau=1.5)

    def test_epsilon_positive(self):
        with pytest.raises(ValueError):
            KernelSpec(epsilon=0.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            KernelSpec(kind="rbf")


class TestEvalKernel:
    def test_orthogonal_unit_cosine_zero(self):
        spec = KernelSpec()
        assert eval_kernel(spec, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)

    def test_self_unit_norm(self):
        spec = KernelSpec()
        k = eval_kernel(spec, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        assert k == pytest.approx(np.exp(5.0), rel=1e-3)
        assert k == pytest.approx(SELF_KERNEL_UNIT, rel=1e-12)

    def test_squared_exponential(self):
        spec = KernelSpec(kind="squared_exponential", length=0.1)
        assert eval_kernel(spec, [0.0], [0.1]) == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_kernel(KernelSpec(), [1.0, 0.0], [1.0, 0.0, 0.0])

    def test_symmetry_exact_and_positive(self):
        rng = np.random.default_rng(0)
        for spec in (KernelSpec(), KernelSpec(kind="squared_exponential", length=0.5)):
            for _ in range(50):
                x, y = rng.normal(size=7), rng.normal(size=7)
                assert eval_kernel(spec, x, y) == eval_kernel(spec, y, x)
                assert eval_kernel(spec, x, y) > 0.0

    def test_scale_invariance_up_to_epsilon(self):
        spec = KernelSpec()
        rng = np.random.default_rng(1)
        x = rng.normal(size=16)
        x /= np.linalg.norm(x)
        y = rng.normal(size=16)
        y /= np.linalg.norm(y)
        base = eval_kernel(spec, x, y)
        for alpha in (0.5, 2.0, 10.0):
            assert eval_kernel(spec, alpha * x, y) == pytest.approx(base, rel=1e-3)


class TestGram:
    def test_singleton(self):
        x = np.array([[0.3, 0.4]])
        g = gram(KernelSpec(), x, x)
        assert g.values.shape == (1, 1)
        assert g.values[0, 0] == eval_kernel(KernelSpec(), x[0], x[0])

    def test_transpose_symmetry_exact(self):
        rng = np.random.default_rng(2)
        X, Y = rng.normal(size=(13, 5)), rng.normal(size=(7, 5))
        for spec in (KernelSpec(), KernelSpec(kind="squared_exponential", length=0.3)):
            assert np.array_equal(gram(spec, X, Y).values, gram(spec, Y, X).values.T)

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(64, 9))
        Y = rng.normal(size=(64, 9))
        spec = KernelSpec()
        fast = gram(spec, X, Y).values
        naive = np.empty((64, 64))
        for i in range(64):
            for j in range(64):
                naive[i, j] = eval_kernel(spec, X[i], Y[j])
        assert np.abs(fast - naive).max() == 0.0

    def test_empty_inputs(self):
        g = gram(KernelSpec(), np.empty((0, 4)), np.empty((3, 4)))
        assert g.values.shape == (0, 3)

    def test_gram_matrix_array_protocol(self):
        g = gram(KernelSpec(), np.eye(2), np.eye(2))
        assert isinstance(g, GramMatrix)
        assert np.asarray(g).shape == (2, 2)


class TestRegularizedSolve:
    def test_identity_system(self):
        B = np.random.default_rng(4).normal(size=(5, 3))
        res = regularized_solve(np.eye(5), B, jitter=0.0)
        assert np.allclose(res.solution, B, atol=1e-14)
        assert not res.fallback

    def test_diagonal_scaling(self):
        d = np.array([1.0, 2.0, 4.0])
        B = np.random.default_rng(5).normal(size=(3, 2))
        res = regularized_solve(np.diag(d), B, jitter=0.5)
        assert np.allclose(res.solution, B / (d + 0.5)[:, None])

    def test_spd_residual(self):
        rng = np.random.default_rng(6)
        A = rng.normal(size=(32, 32))
        K = A @ A.T + 0.1 * np.eye(32)
        B = rng.normal(size=(32, 4))
        j = 1e-3
        res = regularized_solve(K, B, jitter=j)
        assert np.abs((K + j * np.eye(32)) @ res.solution - B).max() < 1e-8

    def test_indefinite_falls_back_flagged(self):
        K = np.diag([1.0, 1.0, -0.5])
        B = np.ones((3, 1))
        with pytest.warns(RuntimeWarning):
            res = regularized_solve(K, B, jitter=0.0)
        assert res.fallback
        assert np.isfinite(res.solution).all()

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            regularized_solve(np.ones((2, 3)), np.ones(2))

    def test_asymmetric_rejected(self):
        K = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            regularized_solve(K, np.ones(2))

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        A = rng.normal(size=(16, 16))
        K = A @ A.T + np.eye(16)
        B = rng.normal(size=(16, 3))
        r1 = regularized_solve(K, B, 1e-4).solution
        r2 = regularized_solve(K, B, 1e-4).solution
        assert np.array_equal(r1, r2)

    def test_vector_rhs_shape_preserved(self):
        res = regularized_solve(np.eye(3), np.ones(3), 0.0)
        assert res.solution.shape == (3,)
