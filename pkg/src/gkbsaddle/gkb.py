"""Generalized Golub-Kahan bidiagonalization for saddle-point systems.

Solves

    [ W   A ] [w]   [g]
    [ A^T 0 ] [p] = [r]

with W symmetric positive semi-definite. The (1,1) block is optionally
augmented to ``M = W + nu A A^T`` (``N = I/nu``); ``nu = 0`` keeps ``M = W``
and ``N = I``. The right-hand side is shifted so that the upper block is
zero, the Craig-variant bidiagonalization builds M- and N-orthonormal bases,
and a delayed lower bound on the energy-norm error decides when to stop.
"""

import math
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatchError, MemoryGuardError, NotPositiveDefiniteError, ZeroDiagonalError
from .inner import InnerSolver, make_inner_solver
from .sparse import SparseMatrix, as_operator, as_vector, diag_of_normal_product, spmv, spmv_transpose

__all__ = [
    "SaddleSystem",
    "GkbConfig",
    "AugmentedSystem",
    "GkbState",
    "SolveReport",
    "augment",
    "transform_rhs",
    "gkb_iterate",
    "stopping_check",
    "back_transform",
    "equilibrate",
    "unscale_solution",
    "orthogonality_diagnostics",
    "solve",
    "BREAKDOWN_TOL",
]

BREAKDOWN_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    W: SparseMatrix
    A: SparseMatrix
    g: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        m, n = self.A.shape
        if self.W.shape != (m, m):
            raise DimensionMismatchError("SaddleSystem W (must be m x m with m = A.nrows)", (m, m), self.W.shape)
        object.__setattr__(self, "g", as_vector(self.g, m, "g"))
        object.__setattr__(self, "r", as_vector(self.r, n, "r"))

    @property
    def m(self):
        return self.A.nrows

    @property
    def n(self):
        return self.A.ncols

    def residual(self, w, p):
        """(W w + A p - g, A^T w - r)."""
        return spmv(self.W, w) + spmv(self.A, p) - self.g, spmv_transpose(self.A, w) - self.r


@dataclass(frozen=True)
class GkbConfig:
    nu: float = 0.0
    tol: float = 1e-5
    delay: int = 5
    maxit: int = 10000
    monitor: bool = False

    def __post_init__(self):
        if not self.nu >= 0.0 or not math.isfinite(self.nu):
            raise ValueError(f"nu must be a finite value >= 0, got {self.nu}")
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.delay < 1:
            raise ValueError(f"delay must be >= 1, got {self.delay}")
        if self.maxit <= self.delay:
            raise ValueError(f"maxit ({self.maxit}) must exceed delay ({self.delay})")


@dataclass(eq=False)
class AugmentedSystem:
    """M (as operator, and as matrix when built explicitly), A, and the shifted rhs.

    ``b`` and ``shift`` stay ``None`` until :func:`transform_rhs` has run.
    """

    M_apply: object
    M_matrix: SparseMatrix | None
    M_diag: np.ndarray
    A: SparseMatrix
    nu: float
    b: np.ndarray | None = None
    shift: np.ndarray | None = None

    @property
    def nu_eff(self):
        # N = I / nu_eff; nu = 0 means N = I
        return self.nu if self.nu > 0 else 1.0


@dataclass(eq=False)
class GkbState:
    k: int = 0
    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    zeta: list = field(default_factory=list)
    v: np.ndarray | None = None
    q: np.ndarray | None = None
    dvec: np.ndarray | None = None
    u: np.ndarray | None = None
    p: np.ndarray | None = None
    V: list | None = None
    Q: list | None = None


@dataclass(eq=False)
class SolveReport:
    iterations: int = 0
    converged: bool = False
    termination_reason: str = "maxit"
    zeta_history: list = field(default_factory=list)
    certified_steps: list = field(default_factory=list)
    lower_bound_estimates: list = field(default_factory=list)
    xi_sq_history: list = field(default_factory=list)
    inner_iterations_per_step: list = field(default_factory=list)
    inner_failures: int = 0
    wall_times: dict = field(default_factory=dict)
    state: GkbState | None = None
    augmented: AugmentedSystem | None = None
    delay: int = 0

    @property
    def final_estimate(self):
        return self.lower_bound_estimates[-1] if self.lower_bound_estimates else float("nan")

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "termination_reason": self.termination_reason,
            "final_lower_bound_estimate": self.final_estimate if self.lower_bound_estimates else None,
            "inner_iterations_total": int(sum(self.inner_iterations_per_step)),
            "inner_failures": self.inner_failures,
            "wall_times": dict(self.wall_times),
        }

    def history_rows(self):
        """One dict per bidiagonalization step."""
        lb = dict(zip((k + self.delay + 1 for k in self.certified_steps), self.lower_bound_estimates))
        rows = []
        for j, z in enumerate(self.zeta_history, start=1):
            rows.append({
                "step": j,
                "zeta": z,
                "alpha": self.state.alpha[j - 1] if self.state else None,
                "beta": self.state.beta[j - 1] if self.state else None,
                "lower_bound_estimate": lb.get(j),
                "inner_iterations": (self.inner_iterations_per_step[j - 1]
                                     if j - 1 < len(self.inner_iterations_per_step) else None),
            })
        return rows


# --- augmentation and transformation ---------------------------------------


def _normal_product_nnz_estimate(A):
    # nnz(A A^T) <= sum over columns of (entries in column)^2
    counts = np.bincount(A.col_indices, minlength=A.ncols).astype(np.float64)
    return float(counts @ counts)


def augment(sys_, nu, explicit=None, inner=None, max_entries=1e8):
    """Build M = W + nu A A^T (or M = W when nu = 0).

    ``explicit`` asks for the sparse sum as a matrix (needed by Cholesky and
    SSOR); by default it follows ``inner.needs_matrix``. The matrix-free
    operator ``x -> W x + nu A (A^T x)`` is always provided.
    """
    if not nu >= 0.0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    if explicit is None:
        explicit = True if inner is None else bool(getattr(inner, "needs_matrix", True))
    W, A = sys_.W, sys_.A
    row_sq = np.asarray(A.to_scipy().multiply(A.to_scipy()).sum(axis=1)).ravel()
    diag = W.diagonal() + nu * row_sq
    if nu == 0.0:
        return AugmentedSystem(as_operator(W), W, diag, A, 0.0)

    def apply(x):
        return spmv(W, x) + nu * spmv(A, spmv_transpose(A, x))

    M = None
    if explicit:
        est = _normal_product_nnz_estimate(A) + W.nnz
        if est > max_entries:
            raise MemoryGuardError(
                f"explicit W + nu A A^T would hold up to {est:.3g} entries (cap {max_entries:.3g}); "
                "use an iterative inner solver with the operator form")
        As = A.to_scipy()
        M = SparseMatrix.from_scipy(W.to_scipy() + nu * (As @ As.T))
    return AugmentedSystem(apply, M, diag, A, float(nu))


def transform_rhs(sys_, aug, inner):
    """shift = M^{-1}(g + nu A r), b = r - A^T shift. Returns ``(b, shift)``."""
    rhs = sys_.g + aug.nu * spmv(sys_.A, sys_.r) if aug.nu > 0 else sys_.g
    if not np.any(rhs):
        shift = np.zeros(sys_.m)
    else:
        shift = inner.solve(rhs)
    b = sys_.r - spmv_transpose(sys_.A, shift)
    return b, shift


def back_transform(u, shift):
    """w = u + shift."""
    u = np.asarray(u, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    if u.shape != shift.shape:
        raise DimensionMismatchError("back_transform", shift.shape, u.shape)
    return u + shift


# --- stopping rule ----------------------------------------------------------


def stopping_check(zeta_history, k, d, tau):
    """Delayed lower-bound test certifying step ``k`` from ``zeta_1 .. zeta_{k+d+1}``.

    Returns ``(stop, xi_sq, energy_sq)`` with ``xi_sq = sum_{j=k+1}^{k+d+1} zeta_j^2``
    and ``energy_sq = sum_{j=1}^{k+d+1} zeta_j^2``; stop iff ``xi_sq <= tau * energy_sq``.
    Sums are exactly rounded (``math.fsum``).
    """
    if len(zeta_history) < k + d + 1:
        raise ValueError(f"need {k + d + 1} zeta values to certify step {k}, have {len(zeta_history)}")
    z = np.asarray(zeta_history[: k + d + 1], dtype=np.float64)
    sq = z * z
    xi_sq = math.fsum(sq[k:])
    energy_sq = math.fsum(sq)
    return xi_sq <= tau * energy_sq, xi_sq, energy_sq


# --- the iteration ----------------------------------------------------------


def _form_sqrt(t, x, what):
    # sqrt(x^T t) with round-off clamping
    val = float(x @ t)
    if val < 0.0:
        if val < -1e-12 * float(np.linalg.norm(x) * np.linalg.norm(t)):
            raise NotPositiveDefiniteError(f"inner operator not SPD: {what} quadratic form {val:.3e}")
        val = 0.0
    return math.sqrt(val)


def gkb_iterate(aug, cfg, inner, callback=None, store_basis=False, basis_cap=200, monitor_stream=None):
    """Run the bidiagonalization on an augmented, shifted system.

    Returns ``(u, p, report)`` for the latest completed step. Step ``k`` is
    certified once ``zeta_{k+d+1}`` exists; the iteration stops on the first
    certified step passing :func:`stopping_check`, on happy breakdown
    (alpha or beta below ``BREAKDOWN_TOL`` times its first value) or at
    ``cfg.maxit`` steps. ``callback(state)`` runs after every step.
    """
    if aug.b is None:
        raise ValueError("transform_rhs has not been applied to this AugmentedSystem")
    A = aug.A
    m, n = A.shape
    b = aug.b
    nu_eff = aug.nu_eff
    d = cfg.delay
    stream = monitor_stream if monitor_stream is not None else sys.stderr
    report = SolveReport()
    report.delay = d
    state = GkbState(V=[] if store_basis else None, Q=[] if store_basis else None)
    report.state = state
    t_start = time.perf_counter()

    if not np.any(b):
        state.u, state.p = np.zeros(m), np.zeros(n)
        report.converged, report.termination_reason = True, "zero_rhs"
        report.wall_times["iterate"] = time.perf_counter() - t_start
        return state.u, state.p, report

    def minv(t):
        w = inner.solve(t)
        report.inner_iterations_per_step.append(inner.stats.last_iterations)
        return w

    def keep(v, q):
        if store_basis and len(state.V) < basis_cap:
            state.V.append(v.copy())
            state.Q.append(q.copy())

    # N^{-1} x = nu_eff x
    nb = nu_eff * b
    beta = _form_sqrt(b, nb, "N^-1")
    q = nb / beta
    t = spmv(A, q)
    w = minv(t)
    alpha = _form_sqrt(t, w, "M")
    if alpha == 0.0:
        raise NotPositiveDefiniteError("A q_1 vanished: A has a null column direction in b")
    v = w / alpha
    zeta = beta / alpha
    dvec = q / alpha
    p = -zeta * dvec
    u = zeta * v
    state.alpha.append(alpha)
    state.beta.append(beta)
    state.zeta.append(zeta)
    state.k = 1
    state.v, state.q, state.dvec, state.u, state.p = v, q, dvec, u, p
    keep(v, q)
    if callback is not None:
        callback(state)
    alpha1, beta1 = alpha, beta

    while state.k < cfg.maxit:
        # g = N^{-1}(A^T v_k - alpha_k N q_k), beta_{k+1} = ||g||_N
        tq = spmv_transpose(A, v) - (alpha / nu_eff) * q
        gvec = nu_eff * tq
        beta = _form_sqrt(tq, gvec, "N")
        if beta <= BREAKDOWN_TOL * beta1:
            report.converged, report.termination_reason = True, "breakdown"
            break
        q = gvec / beta
        # w = M^{-1}(A q_{k+1} - beta_{k+1} M v_k)
        t = spmv(A, q) - beta * aug.M_apply(v)
        w = minv(t)
        alpha = _form_sqrt(t, w, "M")
        if alpha <= BREAKDOWN_TOL * alpha1:
            report.converged, report.termination_reason = True, "breakdown"
            break
        v = w / alpha
        zeta = -(beta / alpha) * zeta
        dvec = (q - beta * dvec) / alpha
        u = u + zeta * v
        p = p - zeta * dvec
        state.alpha.append(alpha)
        state.beta.append(beta)
        state.zeta.append(zeta)
        state.k += 1
        state.v, state.q, state.dvec, state.u, state.p = v, q, dvec, u, p
        keep(v, q)
        if callback is not None:
            callback(state)

        K = state.k
        if K >= d + 2:
            kc = K - d - 1
            stop, xi_sq, energy_sq = stopping_check(state.zeta, kc, d, cfg.tol)
            ratio = xi_sq / energy_sq if energy_sq > 0 else 0.0
            report.certified_steps.append(kc)
            report.xi_sq_history.append(xi_sq)
            report.lower_bound_estimates.append(ratio)
            if cfg.monitor:
                print(f"it {K}: lower bound estimate {ratio:.6e}", file=stream)
            if stop:
                report.converged, report.termination_reason = True, "tolerance"
                break

    report.iterations = state.k
    report.zeta_history = list(state.zeta)
    report.inner_failures = inner.stats.failures
    report.wall_times["iterate"] = time.perf_counter() - t_start
    return state.u, state.p, report


# --- scaling ----------------------------------------------------------------


def equilibrate(sys_):
    """Symmetric block scaling by blockdiag(D^{-1/2}, R^{-1/2}).

    D = diag(W), R = diag(A^T D^{-1} A). Returns ``(scaled, d_scale, r_scale)``
    where ``d_scale = D^{-1/2}`` and ``r_scale = R^{-1/2}`` as vectors; the
    original unknowns are ``(d_scale * w', r_scale * p')``.
    """
    D = sys_.W.diagonal()
    bad = np.flatnonzero(~(D > 0))
    if bad.size:
        raise ZeroDiagonalError("W", bad)
    R = diag_of_normal_product(sys_.A, 1.0 / D)
    bad = np.flatnonzero(~(R > 0))
    if bad.size:
        raise ZeroDiagonalError("diag(A^T D^-1 A)", bad)
    ds = 1.0 / np.sqrt(D)
    rs = 1.0 / np.sqrt(R)
    Ws = sys_.W.to_scipy().multiply(ds[:, None]).multiply(ds[None, :])
    As = sys_.A.to_scipy().multiply(ds[:, None]).multiply(rs[None, :])
    scaled = SaddleSystem(SparseMatrix.from_scipy(Ws), SparseMatrix.from_scipy(As), ds * sys_.g, rs * sys_.r)
    return scaled, ds, rs


def unscale_solution(w, p, d_scale, r_scale):
    return d_scale * w, r_scale * p


# --- diagnostics ------------------------------------------------------------


def orthogonality_diagnostics(state, M_apply, nu):
    """max |V^T M V - I| and max |Q^T N Q - I| over the stored basis vectors."""
    if state.V is None or state.Q is None:
        raise ValueError("basis storage was not enabled for this run (store_basis=True)")
    nu_eff = nu if nu > 0 else 1.0
    op = as_operator(M_apply)
    V = np.column_stack(state.V)
    Q = np.column_stack(state.Q)
    MV = np.column_stack([op(c) for c in state.V])
    k = V.shape[1]
    gv = V.T @ MV - np.eye(k)
    gq = (Q.T @ Q) / nu_eff - np.eye(k)
    return float(np.abs(gv).max()), float(np.abs(gq).max())


# --- one-call driver --------------------------------------------------------


def solve(system, cfg=GkbConfig(), inner="cholesky", callback=None, store_basis=False, basis_cap=200,
          monitor_stream=None, max_entries=1e8):
    """augment -> inner setup -> transform_rhs -> gkb_iterate -> back_transform.

    ``inner`` is an :class:`InnerSolver` instance or a name accepted by
    :func:`make_inner_solver`. Returns ``(w, p, report)`` in the variables of
    ``system``.
    """
    if isinstance(inner, str):
        inner = make_inner_solver(inner)
    if not isinstance(inner, InnerSolver):
        raise TypeError("inner must be an InnerSolver or a solver name")
    times = {}
    t0 = time.perf_counter()
    aug = augment(system, cfg.nu, inner=inner, max_entries=max_entries)
    times["augment"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if aug.M_matrix is not None:
        inner.setup(aug.M_matrix, diag=aug.M_diag)
    else:
        from scipy.sparse.linalg import LinearOperator

        inner.setup(LinearOperator((system.m, system.m), matvec=aug.M_apply, dtype=np.float64), diag=aug.M_diag)
    times["setup"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    b, shift = transform_rhs(system, aug, inner)
    aug = replace(aug, b=b, shift=shift)
    times["transform"] = time.perf_counter() - t0
    u, p, report = gkb_iterate(aug, cfg, inner, callback=callback, store_basis=store_basis,
                               basis_cap=basis_cap, monitor_stream=monitor_stream)
    t0 = time.perf_counter()
    w = back_transform(u, shift)
    times["back_transform"] = time.perf_counter() - t0
    report.wall_times = {**times, **report.wall_times}
    report.augmented = aug
    return w, p, report
