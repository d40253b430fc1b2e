"""Compressed sparse row storage and the handful of kernels the solvers need.

Matrices are immutable once built. Products with vectors run through compiled
loops; structural algebra (sums, products, scalings used while assembling)
goes through :mod:`scipy.sparse` and comes back as :class:`SparseMatrix`.
"""

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import LinearOperator

from . import _kernels  # noqa: I001  (sets the numba pool size before numba loads)
from .errors import DimensionMismatchError, NotPositiveDefiniteError, ZeroDiagonalError

import numba

__all__ = [
    "SparseMatrix",
    "spmv",
    "spmv_transpose",
    "weighted_norm",
    "diag_of_normal_product",
    "as_vector",
    "as_operator",
    "set_num_threads",
    "get_num_threads",
    "num_threads",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, order="C", copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real CSR matrix with sorted, duplicate-free column indices per row."""

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nrows", int(self.nrows))
        object.__setattr__(self, "ncols", int(self.ncols))
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        self._validate()

    def _validate(self):
        ro, ci = self.row_offsets, self.col_indices
        if self.nrows < 0 or self.ncols < 0:
            raise ValueError("negative matrix dimensions")
        if ro.shape != (self.nrows + 1,):
            raise ValueError(f"row_offsets must have length nrows+1={self.nrows + 1}")
        if ro[0] != 0 or np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must start at 0 and be non-decreasing")
        nnz = ro[-1]
        if ci.shape != (nnz,) or self.values.shape != (nnz,):
            raise ValueError("col_indices/values length must equal row_offsets[-1]")
        if nnz == 0:
            return
        if ci.min() < 0 or ci.max() >= self.ncols:
            raise ValueError("column index out of range")
        step = np.diff(ci)
        row_start = np.zeros(nnz, dtype=bool)
        row_start[ro[:-1][ro[:-1] < nnz]] = True
        if np.any(step[~row_start[1:]] <= 0):
            raise ValueError("column indices must be strictly increasing within each row")

    # -- construction -------------------------------------------------------

    @classmethod
    def from_scipy(cls, mat):
        csr = sps.csr_matrix(mat, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape):
        """Build from triplets; repeated (row, col) pairs are summed."""
        coo = sps.coo_matrix((np.asarray(vals, float), (np.asarray(rows), np.asarray(cols))), shape=shape)
        return cls.from_scipy(coo)

    @classmethod
    def from_dense(cls, a):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        return cls.from_scipy(sps.csr_matrix(a))

    @classmethod
    def identity(cls, n):
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def diags(cls, d):
        d = np.asarray(d, dtype=np.float64)
        n = d.shape[0]
        return cls(n, n, np.arange(n + 1), np.arange(n), d)

    @classmethod
    def zeros(cls, nrows, ncols):
        return cls(nrows, ncols, np.zeros(nrows + 1, dtype=np.int64), np.zeros(0), np.zeros(0))

    # -- views --------------------------------------------------------------

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    def to_scipy(self):
        return sps.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    def toarray(self):
        return self.to_scipy().toarray()

    def transpose(self):
        """Explicit transpose (a new matrix); products with A^T should use :func:`spmv_transpose`."""
        return SparseMatrix.from_scipy(self.to_scipy().T)

    @property
    def T(self):
        return self.transpose()

    def diagonal(self):
        return self.to_scipy().diagonal()

    def symmetry_deviation(self):
        """max |A - A^T| over stored entries."""
        if self.nrows != self.ncols:
            raise DimensionMismatchError("symmetry check (square matrix)", self.nrows, self.ncols)
        diff = self.to_scipy() - self.to_scipy().T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def __matmul__(self, x):
        if isinstance(x, SparseMatrix):
            return SparseMatrix.from_scipy(self.to_scipy() @ x.to_scipy())
        return spmv(self, x)

    def __repr__(self):
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"

    def as_operator(self):
        return LinearOperator(self.shape, matvec=lambda x: spmv(self, x),
                              rmatvec=lambda x: spmv_transpose(self, x), dtype=np.float64)


def as_vector(x, n=None, name="vector"):
    """Return ``x`` as a contiguous float64 1-D array, checking length and finiteness."""
    v = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if n is not None and v.shape[0] != n:
        raise DimensionMismatchError(name, n, v.shape[0])
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_operator(op):
    """Wrap a SparseMatrix, LinearOperator, dense array or callable as a callable x -> y."""
    if isinstance(op, SparseMatrix):
        return lambda x: spmv(op, x)
    if isinstance(op, LinearOperator):
        return op.matvec
    if isinstance(op, np.ndarray):
        return lambda x: op @ x
    if callable(op):
        return op
    raise TypeError(f"cannot use {type(op).__name__} as a linear operator")


def spmv(A, x):
    """y = A x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != A.ncols:
        raise DimensionMismatchError("spmv (A.ncols vs x.length)", A.ncols, x.shape[0] if x.ndim == 1 else x.shape)
    y = np.empty(A.nrows)
    if A.nrows:
        _kernels.csr_matvec(A.row_offsets, A.col_indices, A.values, x, y)
    return y


def spmv_transpose(A, x):
    """y = A^T x, traversing the rows of A (A^T is never formed)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != A.nrows:
        raise DimensionMismatchError("spmv_transpose (A.nrows vs x.length)", A.nrows,
                                     x.shape[0] if x.ndim == 1 else x.shape)
    y = np.empty(A.ncols)
    _kernels.csr_rmatvec(A.row_offsets, A.col_indices, A.values, x, y)
    return y


def weighted_norm(x, weight_apply):
    """sqrt(x^T W x) for an SPD weight W given as matrix, operator or callable.

    Round-off negatives down to ``-1e-12 * ||x||^2`` are clamped to zero;
    anything more negative raises :class:`NotPositiveDefiniteError`.
    """
    x = np.asarray(x, dtype=np.float64)
    q = float(x @ as_operator(weight_apply)(x))
    if q < 0.0:
        if q < -1e-12 * float(x @ x):
            raise NotPositiveDefiniteError(f"operator not positive definite: x^T W x = {q:.3e}")
        return 0.0
    return float(np.sqrt(q))


def diag_of_normal_product(A, dinv):
    """diag(A^T diag(dinv) A) without forming the product."""
    dinv = np.ascontiguousarray(dinv, dtype=np.float64)
    if dinv.shape != (A.nrows,):
        raise DimensionMismatchError("diag_of_normal_product (A.nrows vs dinv.length)", A.nrows, dinv.shape[0])
    bad = np.flatnonzero(~(dinv > 0))
    if bad.size:
        raise ZeroDiagonalError("dinv", bad)
    out = np.empty(A.ncols)
    _kernels.csr_column_sq_weighted(A.row_offsets, A.col_indices, A.values, dinv, out)
    return out


def set_num_threads(n):
    """Worker threads used by :func:`spmv`. Results do not depend on this value."""
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def get_num_threads():
    return numba.get_num_threads()


@contextmanager
def num_threads(n):
    old = get_num_threads()
    set_num_threads(n)
    try:
        yield
    finally:
        set_num_threads(old)
