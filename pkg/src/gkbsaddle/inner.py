"""SPD solvers for the systems M x = f that the outer iteration needs.

Two families sit behind :class:`InnerSolver`: a sparse Cholesky factorization
(reverse Cuthill-McKee ordering, up-looking numeric phase) and preconditioned
conjugate gradients with Jacobi or SSOR preconditioning.
"""

import abc
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import LinearOperator, onenormest

from . import _kernels
from .errors import (DimensionMismatchError, IllConditionedError, NotPositiveDefiniteError,
                     SymmetryError, ZeroDiagonalError)
from .sparse import SparseMatrix, as_operator, as_vector

__all__ = [
    "CholeskyFactor",
    "cholesky_setup",
    "cholesky_solve",
    "condition_estimate",
    "CgConfig",
    "CgResult",
    "cg_solve",
    "precond_apply",
    "InnerSolver",
    "InnerStats",
    "CholeskySolver",
    "CgSolver",
    "make_inner_solver",
]

INNER_KINDS = ("cholesky", "cg-jacobi", "cg-ssor", "cg")


# --- Cholesky ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """P M P^T = L L^T with ``perm`` the row order, i.e. (P M P^T)[i, j] = M[perm[i], perm[j]].

    The factor is held column-wise (``colptr``, ``rowind``, ``vals``: CSC of L,
    diagonal first in each column); :attr:`L` gives it as a CSR matrix.
    """

    perm: np.ndarray
    colptr: np.ndarray
    rowind: np.ndarray
    vals: np.ndarray

    @property
    def n(self):
        return self.perm.shape[0]

    @property
    def nnz(self):
        return int(self.colptr[-1])

    @property
    def L(self):
        # CSC arrays of L read as CSR describe L^T
        return SparseMatrix(self.n, self.n, self.colptr, self.rowind, self.vals).transpose()

    def pivot_ratio(self):
        """(max L_ii / min L_ii)^2, a cheap lower bound on cond(M)."""
        d = self.vals[self.colptr[:-1]]
        return float((d.max() / d.min()) ** 2) if d.size else 1.0


def cholesky_setup(M, sym_tol=1e-12, max_pivot_ratio=1e15):
    """Factor an SPD :class:`SparseMatrix` without pivoting after an RCM reordering.

    Raises :class:`SymmetryError` when the stored pattern is asymmetric beyond
    ``sym_tol`` (relative to max |M|), :class:`NotPositiveDefiniteError` at the
    first nonpositive pivot, and :class:`IllConditionedError` when the pivots
    spread beyond ``max_pivot_ratio``.
    """
    if M.nrows != M.ncols:
        raise DimensionMismatchError("cholesky_setup (square matrix)", M.nrows, M.ncols)
    n = M.nrows
    scale = float(np.abs(M.values).max()) if M.nnz else 0.0
    dev = M.symmetry_deviation()
    if dev > sym_tol * max(scale, 1e-300):
        raise SymmetryError(dev, sym_tol * scale)
    if n == 0:
        z = np.zeros(0, dtype=np.int64)
        return CholeskyFactor(z, np.zeros(1, dtype=np.int64), z, np.zeros(0))

    perm = reverse_cuthill_mckee(M.to_scipy(), symmetric_mode=True).astype(np.int64)
    C = M.to_scipy()[perm][:, perm].tocsr()
    C.sort_indices()
    Cp = C.indptr.astype(np.int64)
    Ci = C.indices.astype(np.int64)
    Cx = C.data.astype(np.float64)

    parent = _kernels.etree(Cp, Ci, n)
    counts = _kernels.column_counts(Cp, Ci, n, parent)
    colptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=colptr[1:])
    rowind = np.empty(colptr[-1], dtype=np.int64)
    vals = np.empty(colptr[-1])
    bad = _kernels.cholesky_numeric(Cp, Ci, Cx, n, parent, colptr, rowind, vals)
    if bad >= 0:
        row = int(perm[bad])
        raise NotPositiveDefiniteError(f"matrix not positive definite at row {row}", row=row)
    factor = CholeskyFactor(perm, colptr, rowind, vals)
    ratio = factor.pivot_ratio()
    if ratio > max_pivot_ratio:
        raise IllConditionedError(
            f"factorization is numerically meaningless: pivot ratio {ratio:.2e} > {max_pivot_ratio:.0e}")
    return factor


def cholesky_solve(F, f):
    """Solve M x = f with a factor from :func:`cholesky_setup`."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if f.shape != (F.n,):
        raise DimensionMismatchError("cholesky_solve (factor size vs rhs length)", F.n, f.shape[0])
    y = _kernels.lower_solve_csc(F.colptr, F.rowind, F.vals, f[F.perm])
    z = _kernels.lower_transpose_solve_csc(F.colptr, F.rowind, F.vals, y)
    x = np.empty_like(z)
    x[F.perm] = z
    return x


def condition_estimate(F, M):
    """Estimate of the 1-norm condition number of M from its factor (a few solves)."""
    if F.n == 0:
        return 1.0
    solve = lambda x: cholesky_solve(F, np.ravel(x))  # noqa: E731
    inv = LinearOperator((F.n, F.n), matvec=solve, rmatvec=solve, dtype=np.float64)
    return float(onenormest(M.to_scipy()) * onenormest(inv))


# --- preconditioned CG ------------------------------------------------------


@dataclass(frozen=True)
class CgConfig:
    """Inner CG options; ``tol`` is a relative true-residual reduction."""

    tol: float = 1e-8
    maxit: int = 10000
    preconditioner: str = "jacobi"
    omega: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"CG tolerance must lie in (0, 1), got {self.tol}")
        if self.maxit < 1:
            raise ValueError("CG maxit must be >= 1")
        if self.preconditioner not in ("none", "jacobi", "ssor"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.preconditioner == "ssor" and not 0.0 < self.omega < 2.0:
            raise ValueError(f"SSOR relaxation must lie in (0, 2), got {self.omega}")


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float


def precond_apply(kind, M, r, omega=1.0, diag=None):
    """Apply the Jacobi or SSOR(omega) preconditioner built from ``M`` to ``r``.

    SSOR is ``z = (2-w)/w * (D/w + L)^{-T} (D/w) (D/w + L)^{-1} r`` with D the
    diagonal and L the strict lower triangle of the (symmetric) matrix M; for a
    diagonal M and w = 1 it reduces to Jacobi. ``diag`` may be passed to skip
    extracting the diagonal (Jacobi on matrix-free operators needs it).
    """
    if diag is None:
        diag = M.diagonal()
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.shape != diag.shape:
        raise DimensionMismatchError("precond_apply", diag.shape[0], r.shape[0])
    bad = np.flatnonzero(diag == 0.0)
    if bad.size:
        raise ZeroDiagonalError("preconditioner diagonal", bad)
    if kind == "jacobi":
        return r / diag
    if kind == "ssor":
        if not 0.0 < omega < 2.0:
            raise ValueError(f"SSOR relaxation must lie in (0, 2), got {omega}")
        return _kernels.ssor_apply(M.row_offsets, M.col_indices, M.values, np.ascontiguousarray(diag, float),
                                   float(omega), r)
    raise ValueError(f"unknown preconditioner {kind!r}")


def _preconditioner(cfg, M, diag):
    if cfg.preconditioner == "none":
        return lambda r: r.copy()
    if cfg.preconditioner == "jacobi":
        if diag is None:
            if not isinstance(M, SparseMatrix):
                raise ValueError("Jacobi on a matrix-free operator needs its diagonal")
            diag = M.diagonal()
        d = np.asarray(diag, dtype=np.float64)
        bad = np.flatnonzero(~(d > 0))
        if bad.size:
            raise ZeroDiagonalError("Jacobi preconditioner", bad)
        inv = 1.0 / d
        return lambda r: r * inv
    if not isinstance(M, SparseMatrix):
        raise ValueError("SSOR needs an explicit SparseMatrix")
    d = M.diagonal() if diag is None else np.asarray(diag, dtype=np.float64)
    bad = np.flatnonzero(~(d > 0))
    if bad.size:
        raise ZeroDiagonalError("SSOR preconditioner", bad)
    return lambda r: precond_apply("ssor", M, r, cfg.omega, d)


def cg_solve(apply_M, f, cfg=CgConfig(), diag=None, x0=None, callback=None, preconditioner=None):
    """Preconditioned conjugate gradients for SPD M.

    Iterates until the preconditioned residual satisfies ``||B r_k|| <= tol ||B f||``,
    then confirms ``||f - M x|| <= tol ||f||`` on the true residual; if that
    check fails the preconditioned threshold is tightened and the iteration
    resumes from the refreshed residual. Running out of iterations is reported
    through ``converged=False``, not raised.

    ``apply_M`` may be a SparseMatrix (required for SSOR), an operator or a
    callable. ``preconditioner`` overrides ``cfg.preconditioner`` with any SPD
    callable r -> z.
    """
    op = as_operator(apply_M)
    f = as_vector(f, name="cg right-hand side")
    prec = preconditioner if preconditioner is not None else _preconditioner(cfg, apply_M, diag)
    fnorm = float(np.linalg.norm(f))
    n = f.shape[0]
    if fnorm == 0.0:
        return CgResult(np.zeros(n), 0, True, 0.0)
    target = cfg.tol * fnorm

    if x0 is None:
        x = np.zeros(n)
        r = f.copy()
    else:
        x = as_vector(x0, n, "cg initial guess").copy()
        r = f - op(x)
    threshold = cfg.tol * float(np.linalg.norm(prec(f)))
    it = 0
    while True:
        z = prec(r)
        rz = float(r @ z)
        p = z.copy()
        while it < cfg.maxit and float(np.linalg.norm(z)) > threshold:
            q = op(p)
            pq = float(p @ q)
            if not pq > 0.0:
                raise NotPositiveDefiniteError(f"operator not SPD: p^T M p = {pq:.3e} at CG iteration {it}")
            a = rz / pq
            x += a * p
            r -= a * q
            it += 1
            z = prec(r)
            rz_new = float(r @ z)
            p *= rz_new / rz
            p += z
            rz = rz_new
            if callback is not None:
                callback(x)
        r = f - op(x)
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            return CgResult(x, it, True, rnorm)
        if it >= cfg.maxit:
            return CgResult(x, it, False, rnorm)
        threshold *= 0.5 * target / rnorm


# --- the common interface ---------------------------------------------------


@dataclass
class InnerStats:
    last_iterations: int = 0
    total_iterations: int = 0
    solves: int = 0
    failures: int = 0
    last_residual: float = float("nan")


class InnerSolver(abc.ABC):
    """setup(M) once, then solve(f) any number of times."""

    needs_matrix = False

    def __init__(self):
        self.stats = InnerStats()
        self._n = None

    @abc.abstractmethod
    def setup(self, M, diag=None):
        """Prepare for solves with M; ``diag`` is diag(M) for matrix-free M."""

    @abc.abstractmethod
    def _solve(self, f):
        ...

    def solve(self, f):
        if self._n is None:
            raise RuntimeError(f"{type(self).__name__}.solve called before setup")
        f = np.ascontiguousarray(f, dtype=np.float64)
        if f.shape != (self._n,):
            raise DimensionMismatchError("inner solve", self._n, f.shape[0])
        x, its, ok, res = self._solve(f)
        s = self.stats
        s.last_iterations = its
        s.total_iterations += its
        s.solves += 1
        s.failures += not ok
        s.last_residual = res
        return x

    def describe(self):
        return type(self).__name__


class CholeskySolver(InnerSolver):
    """Direct inner solver. ``setup`` rejects matrices whose estimated condition
    number exceeds ``max_condition`` (solves would carry no reliable digits);
    pass ``max_condition=None`` to skip the estimate."""

    needs_matrix = True

    def __init__(self, max_pivot_ratio=1e15, max_condition=1e14):
        super().__init__()
        self.max_pivot_ratio = max_pivot_ratio
        self.max_condition = max_condition
        self.factor = None
        self.condition = None

    def setup(self, M, diag=None):
        if not isinstance(M, SparseMatrix):
            raise TypeError("the Cholesky inner solver needs an explicit SparseMatrix")
        self.factor = cholesky_setup(M, max_pivot_ratio=self.max_pivot_ratio)
        self._n = M.nrows
        if self.max_condition is not None:
            self.condition = condition_estimate(self.factor, M)
            if self.condition > self.max_condition:
                raise IllConditionedError(f"inner matrix too ill-conditioned: estimated condition number "
                                          f"{self.condition:.2e} > {self.max_condition:.0e}")
        return self

    def _solve(self, f):
        return cholesky_solve(self.factor, f), 0, True, float("nan")

    def describe(self):
        return "cholesky"


class CgSolver(InnerSolver):
    """CG with a fixed preconditioner. ``hook`` replaces the built-in
    preconditioner with any SPD callable r -> z (e.g. an external multigrid)."""

    def __init__(self, cfg=CgConfig(), hook=None):
        super().__init__()
        self.cfg = cfg
        self.hook = hook
        self.needs_matrix = cfg.preconditioner == "ssor"

    def setup(self, M, diag=None):
        self._M = M
        self._diag = diag
        if isinstance(M, SparseMatrix):
            self._n = M.nrows
        else:
            self._n = M.shape[0]
        if self.hook is None:
            # fail early on zero diagonals or missing matrices
            _preconditioner(self.cfg, M, diag)
        return self

    def _solve(self, f):
        res = cg_solve(self._M, f, self.cfg, diag=self._diag, preconditioner=self.hook)
        return res.x, res.iterations, res.converged, res.residual_norm

    def describe(self):
        return f"cg-{self.cfg.preconditioner}"


def make_inner_solver(kind, tol=1e-8, maxit=10000, omega=1.0):
    """Build an inner solver from a CLI-style name."""
    if kind == "cholesky":
        return CholeskySolver()
    if kind in ("cg-jacobi", "cg-ssor", "cg"):
        pre = {"cg-jacobi": "jacobi", "cg-ssor": "ssor", "cg": "none"}[kind]
        return CgSolver(CgConfig(tol=tol, maxit=maxit, preconditioner=pre, omega=omega))
    raise ValueError(f"unknown inner solver {kind!r}; choose from {', '.join(INNER_KINDS)}")
