import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from gkbsaddle import (DimensionMismatchError, NotPositiveDefiniteError, SparseMatrix, ZeroDiagonalError,
                       diag_of_normal_product, num_threads, spmv, spmv_transpose, weighted_norm)
from gkbsaddle.sparse import get_num_threads, set_num_threads


def random_sparse(rng, m, n, density):
    return SparseMatrix.from_scipy(sps.random(m, n, density=density, random_state=rng, format="csr"))


@st.composite
def sparse_and_vectors(draw, max_dim=200):
    m = draw(st.integers(1, max_dim))
    n = draw(st.integers(1, max_dim))
    density = draw(st.floats(0.0, 1.0))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    A = random_sparse(rng, m, n, density)
    return A, rng.standard_normal(n), rng.standard_normal(m)


class TestStorage:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            SparseMatrix(2, 2, [0, 1], [0], [1.0])
        with pytest.raises(ValueError):
            SparseMatrix(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])
        with pytest.raises(ValueError):
            SparseMatrix(1, 2, [0, 2], [1, 0], [1.0, 1.0])
        with pytest.raises(ValueError):
            SparseMatrix(1, 2, [0, 2], [1, 1], [1.0, 1.0])
        with pytest.raises(ValueError):
            SparseMatrix(1, 2, [0, 1], [2], [1.0])

    def test_from_coo_sums_duplicates(self):
        A = SparseMatrix.from_coo([0, 0, 1], [1, 1, 0], [1.0, 2.0, 5.0], (2, 2))
        assert A.nnz == 2
        np.testing.assert_array_equal(A.toarray(), [[0, 3], [5, 0]])

    def test_immutable(self):
        A = SparseMatrix.identity(3)
        with pytest.raises(ValueError):
            A.values[0] = 2.0
        with pytest.raises(AttributeError):
            A.nrows = 4

    def test_empty_rows_and_zero_matrix(self):
        Z = SparseMatrix.zeros(4, 4)
        np.testing.assert_array_equal(spmv(Z, np.ones(4)), np.zeros(4))
        A = SparseMatrix.from_dense([[0, 0], [1, 0], [0, 0]])
        np.testing.assert_array_equal(spmv(A, [2.0, 7.0]), [0, 2, 0])

    def test_symmetry_deviation(self):
        A = SparseMatrix.from_dense([[1, 2], [2.5, 1]])
        assert A.symmetry_deviation() == pytest.approx(0.5)


class TestSpmv:
    def test_identity(self):
        np.testing.assert_array_equal(spmv(SparseMatrix.identity(3), [1.0, 2.0, 3.0]), [1, 2, 3])

    def test_zero_vector(self, rng):
        A = random_sparse(rng, 7, 5, 0.5)
        np.testing.assert_array_equal(spmv(A, np.zeros(5)), np.zeros(7))

    def test_dense_oracle(self, rng):
        A = random_sparse(rng, 5, 4, 0.6)
        x = rng.standard_normal(4)
        ref = A.toarray() @ x
        np.testing.assert_allclose(spmv(A, x), ref, rtol=1e-14, atol=1e-14 * np.abs(ref).max())

    def test_mismatch(self):
        with pytest.raises(DimensionMismatchError, match="3.*2"):
            spmv(SparseMatrix.identity(3), np.ones(2))

    def test_transpose_identity(self):
        np.testing.assert_array_equal(spmv_transpose(SparseMatrix.identity(3), [4.0, 5.0, 6.0]), [4, 5, 6])

    def test_transpose_hand(self):
        A = SparseMatrix.from_dense([[1, 0, 2], [0, 3, 0]])
        np.testing.assert_array_equal(spmv_transpose(A, [1.0, 1.0]), [1, 3, 2])

    def test_transpose_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            spmv_transpose(SparseMatrix.from_dense([[1, 0, 2], [0, 3, 0]]), np.ones(3))

    @settings(max_examples=60, deadline=None)
    @given(sparse_and_vectors())
    def test_adjoint_identity(self, data):
        A, x, y = data
        lhs = y @ spmv(A, x)
        rhs = x @ spmv_transpose(A, y)
        scale = np.abs(A.values).sum() * np.abs(x).max() * np.abs(y).max() + 1e-300
        assert abs(lhs - rhs) <= 1e-12 * scale

    @settings(max_examples=60, deadline=None)
    @given(sparse_and_vectors())
    def test_dense_oracle_property(self, data):
        A, x, _ = data
        ref = A.toarray() @ x
        scale = np.abs(A.toarray()) @ np.abs(x)
        assert np.all(np.abs(spmv(A, x) - ref) <= 1e-13 * scale + 1e-300)

    def test_thread_count_does_not_change_bits(self, rng):
        A = random_sparse(rng, 3000, 3000, 0.01)
        x = rng.standard_normal(3000)
        with num_threads(1):
            y1 = spmv(A, x)
        with num_threads(4):
            y4 = spmv(A, x)
        assert np.array_equal(y1, y4)

    def test_num_threads_restores(self):
        before = get_num_threads()
        with num_threads(1):
            assert get_num_threads() == 1
        assert get_num_threads() == before
        with pytest.raises(ValueError):
            set_num_threads(0)


class TestWeightedNorm:
    def test_euclidean(self):
        assert weighted_norm(np.array([3.0, 4.0]), SparseMatrix.identity(2)) == 5.0

    def test_scaled_identity(self):
        assert weighted_norm(np.array([1.0, 0.0]), lambda x: 4.0 * x) == 2.0

    def test_dense_oracle(self, rng):
        B = rng.standard_normal((6, 6))
        S = B @ B.T + 6 * np.eye(6)
        x = rng.standard_normal(6)
        assert weighted_norm(x, S) == pytest.approx(np.sqrt(x @ S @ x), rel=1e-13)

    def test_roundoff_clamped(self):
        assert weighted_norm(np.array([1.0]), lambda x: -1e-14 * x) == 0.0

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefiniteError, match="not positive definite"):
            weighted_norm(np.array([1.0, 1.0]), lambda x: -x)


class TestNormalDiagonal:
    def test_identity(self):
        np.testing.assert_array_equal(diag_of_normal_product(SparseMatrix.identity(3), np.ones(3)), np.ones(3))

    def test_hand(self):
        np.testing.assert_array_equal(diag_of_normal_product(SparseMatrix.from_dense([[2.0], [0.0]]),
                                                             np.ones(2)), [4.0])

    def test_dense_oracle(self, rng):
        A = SparseMatrix.from_dense(rng.standard_normal((6, 3)))
        d = rng.uniform(0.5, 2.0, 6)
        ref = np.diag(A.toarray().T @ np.diag(d) @ A.toarray())
        np.testing.assert_allclose(diag_of_normal_product(A, d), ref, rtol=1e-13)

    def test_nonpositive_weight(self):
        with pytest.raises(ZeroDiagonalError):
            diag_of_normal_product(SparseMatrix.identity(2), np.array([1.0, 0.0]))
