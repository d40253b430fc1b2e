"""Test problems with known exact solutions.

``poiseuille``
    Channel flow on [0, 2] x [0, 1], u = (4y(1-y), 0), p = 8(2-x), discretized
    by cell-centered co-located finite volumes. Walls carry no-slip data, the
    inlet x = 0 the parabolic profile; at the outlet x = 2 the velocity has a
    zero normal derivative and the pressure is fixed to its exact value 0.
``stokes-q2p1``
    Stokes flow on the unit square with u = (x^3 + y^3, 2x^3 - 3x^2 y) and
    p = 3/2 (x^2 + y^2) - 1, discretized by biquadratic continuous velocity and
    discontinuous linear pressure on a uniform quadrilateral mesh.
"""

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from .errors import DimensionMismatchError, GkbError
from .gkb import GkbConfig, SaddleSystem, equilibrate, solve
from .inner import make_inner_solver
from .mmio import read_matrix_market, write_matrix_market
from .sparse import SparseMatrix, as_vector

__all__ = [
    "ProblemInstance",
    "ErrorReport",
    "assemble_poiseuille",
    "assemble_stokes_q2p1",
    "error_norms",
    "nu_sweep",
    "dof_counts",
    "export_instance",
    "load_system",
    "PROBLEM_KINDS",
]

PROBLEM_KINDS = ("fvm-poiseuille", "fem-q2p1")


@dataclass(eq=False)
class ProblemInstance:
    """An assembled saddle system together with its exact solution.

    ``system`` is what a solver should see (equilibrated unless assembled with
    ``equilibrate=False``); ``raw_system`` is the unscaled discretization.
    ``exact_w`` and ``exact_p`` are the exact fields sampled at the raw
    unknowns: cell centers for finite volumes, interior velocity nodes and
    element-wise L2 projections of p for finite elements.
    """

    system: SaddleSystem
    raw_system: SaddleSystem
    d_scale: np.ndarray | None
    r_scale: np.ndarray | None
    exact_w: np.ndarray
    exact_p: np.ndarray
    kind: str
    nx: int
    ny: int
    hx: float
    hy: float
    velocity: object = None
    pressure: object = None
    assembly_time: float = 0.0
    fem: dict = field(default_factory=dict, repr=False)

    @property
    def m(self):
        return self.system.m

    @property
    def n(self):
        return self.system.n

    @property
    def equilibrated(self):
        return self.d_scale is not None

    def unscale(self, w, p):
        """Map a solution of ``system`` to the raw unknowns."""
        if self.d_scale is None:
            return np.asarray(w, float), np.asarray(p, float)
        return self.d_scale * w, self.r_scale * p

    def scale(self, w, p):
        """Inverse of :meth:`unscale`."""
        if self.d_scale is None:
            return np.asarray(w, float), np.asarray(p, float)
        return w / self.d_scale, p / self.r_scale

    def mesh_info(self):
        return {"kind": self.kind, "nx": self.nx, "ny": self.ny, "hx": self.hx, "hy": self.hy,
                "m": self.m, "n": self.n, "equilibrated": self.equilibrated}


@dataclass(frozen=True)
class ErrorReport:
    """Discretization errors of a computed solution.

    Finite volumes: ``err2_u = ||u_h - u||_2 / sqrt(nx ny)``, likewise ``err2_p``.
    Finite elements: ``err2_u`` and ``err2_p`` are the L2(Omega) norms.
    ``errM_u = ||u_h - u||_W / ||u||_W`` with the unscaled W in both cases.
    """

    err2_u: float
    err2_p: float
    errM_u: float

    def __post_init__(self):
        for name in ("err2_u", "err2_p", "errM_u"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def to_dict(self):
        return {"err2_u": self.err2_u, "err2_p": self.err2_p, "errM_u": self.errM_u}


def dof_counts(kind, nx, ny):
    """(dof, dof_M, dof_A) without assembling."""
    if kind == "fvm-poiseuille":
        m, n = 2 * nx * ny, nx * ny
    elif kind == "fem-q2p1":
        m, n = 2 * (2 * nx - 1) * (2 * ny - 1), 3 * nx * ny
    else:
        raise ValueError(f"unknown problem kind {kind!r}; choose from {', '.join(PROBLEM_KINDS)}")
    return m + n, m, n


def _check_mesh(nx, ny, least):
    for name, v in (("nx", nx), ("ny", ny)):
        if int(v) != v or v < least:
            raise ValueError(f"{name} must be an integer >= {least}, got {v}")


def _finish(raw, do_equilibrate):
    if do_equilibrate:
        scaled, ds, rs = equilibrate(raw)
        return scaled, ds, rs
    return raw, None, None


# --- Poiseuille, finite volumes --------------------------------------------


def poiseuille_velocity(x, y):
    return 4.0 * y * (1.0 - y), np.zeros_like(np.asarray(y, dtype=float))


def poiseuille_pressure(x, y):
    return 8.0 * (2.0 - np.asarray(x, dtype=float))


def assemble_poiseuille(nx, ny, equilibrate=True):
    """Assemble the channel problem on an ``nx`` x ``ny`` cell grid.

    Unknowns are ordered ``w = (u_1 .. u_N, v_1 .. v_N)`` and ``p_1 .. p_N``
    with cell ``(i, j)`` at index ``j * nx + i``. W holds the face-integrated
    5-point Laplacian of each velocity component, A the gradient with face
    pressures interpolated linearly, so ``A^T`` equals minus the discrete
    divergence. Dirichlet velocity faces enter through a ghost cell (twice
    the face coefficient), their data moves to ``g`` and ``r``.
    """
    _check_mesh(nx, ny, 2)
    t0 = time.perf_counter()
    hx, hy = 2.0 / nx, 1.0 / ny
    N = nx * ny
    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    P = J * nx + I
    xc, yc = (I + 0.5) * hx, (J + 0.5) * hy
    ub, _ = poiseuille_velocity(xc, yc)
    cx, cy = hy / hx, hx / hy

    diag = np.zeros(N)
    rows, cols, vals = [], [], []

    def couple(mask, shift, c):
        # interior face between P and P + shift
        diag[mask] += c
        rows.append(P[mask])
        cols.append(P[mask] + shift)
        vals.append(np.full(mask.sum(), -c))

    couple(I < nx - 1, 1, cx)
    couple(I > 0, -1, cx)
    couple(J < ny - 1, nx, cy)
    couple(J > 0, -nx, cy)
    inlet, wall_n, wall_s = I == 0, J == ny - 1, J == 0
    diag += 2.0 * cx * inlet + 2.0 * cy * wall_n + 2.0 * cy * wall_s
    rows.append(P)
    cols.append(P)
    vals.append(diag)
    L = sps.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    W = sps.block_diag([L, L], format="csr")

    g = np.zeros(2 * N)
    g[P[inlet]] = 2.0 * cx * ub[inlet]

    # gradient: x-faces carry hy * p_f, y-faces hx * p_f
    ar, ac, av = [], [], []

    def face(row_off, mask, nb, c):
        # +/- c * (p_P + p_nb) / 2 for an interior face
        ar.extend([row_off + P[mask]] * 2)
        ac.extend([P[mask], P[mask] + nb])
        av.extend([np.full(mask.sum(), 0.5 * c)] * 2)

    def wall(row_off, mask, c):
        # velocity-Dirichlet face: p_f = p_P
        ar.append(row_off + P[mask])
        ac.append(P[mask])
        av.append(np.full(mask.sum(), c))

    face(0, I < nx - 1, 1, hy)
    face(0, I > 0, -1, -hy)
    wall(0, inlet, -hy)
    # outlet: p_f = 0 is known and contributes nothing
    face(N, J < ny - 1, nx, hx)
    face(N, J > 0, -nx, -hx)
    wall(N, wall_n, hx)
    wall(N, wall_s, -hx)
    A = sps.coo_matrix((np.concatenate(av), (np.concatenate(ar), np.concatenate(ac))), shape=(2 * N, N))

    r = np.zeros(N)
    r[P[inlet]] = -ub[inlet] * hy

    raw = SaddleSystem(SparseMatrix.from_scipy(W), SparseMatrix.from_scipy(A), g, r)
    system, ds, rs = _finish(raw, equilibrate)
    exact_w = np.concatenate([ub, np.zeros(N)])
    exact_p = poiseuille_pressure(xc, yc)
    return ProblemInstance(system, raw, ds, rs, exact_w, exact_p, "fvm-poiseuille", nx, ny, hx, hy,
                           velocity=poiseuille_velocity, pressure=poiseuille_pressure,
                           assembly_time=time.perf_counter() - t0)


# --- Stokes, Q2-P1 ----------------------------------------------------------


def stokes_velocity(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return x**3 + y**3, 2.0 * x**3 - 3.0 * x**2 * y


def stokes_pressure(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return 1.5 * x**2 + 1.5 * y**2 - 1.0


def stokes_force(x, y):
    # -lap u + grad p for the exact pair above
    return -3.0 * x - 6.0 * y, -12.0 * x + 9.0 * y


def _lagrange2(t):
    """Quadratic Lagrange basis on nodes -1, 0, 1 and its derivative; shape (3, len(t))."""
    t = np.asarray(t, dtype=float)
    phi = np.array([0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)])
    dphi = np.array([t - 0.5, -2.0 * t, t + 0.5])
    return phi, dphi


def _reference_tables(nq):
    """Tensor Gauss rule and Q2 / P1 tables on [-1, 1]^2 (local node l = 3 b + a)."""
    t, wt = np.polynomial.legendre.leggauss(nq)
    xi, eta = np.meshgrid(t, t, indexing="xy")
    xi, eta = xi.ravel(), eta.ravel()
    w = np.outer(wt, wt).ravel()
    px, dpx = _lagrange2(xi)
    py, dpy = _lagrange2(eta)
    a = np.tile(np.arange(3), 3)
    b = np.repeat(np.arange(3), 3)
    phi = px[a] * py[b]              # (9, nq^2)
    dphi_dxi = dpx[a] * py[b]
    dphi_deta = px[a] * dpy[b]
    psi = np.array([np.ones_like(xi), xi, eta])  # (3, nq^2)
    return xi, eta, w, phi, dphi_dxi, dphi_deta, psi


def assemble_stokes_q2p1(nx, ny, equilibrate=False):
    """Assemble the Q2-P1 Stokes problem on an ``nx`` x ``ny`` element grid.

    Velocity nodes form a ``(2nx+1) x (2ny+1)`` lattice; boundary nodes carry the
    exact solution and are eliminated, so ``w`` holds the x-components of the
    interior nodes followed by their y-components. Element ``e = ey * nx + ex``
    owns pressure unknowns ``3e, 3e+1, 3e+2`` for the basis ``{1, xi, eta}``.
    ``A[v, q] = -int q div v``.

    A annihilates the piecewise constant pressure ``c`` (ones on the ``3e``
    unknowns). ``r`` is projected onto the complement of ``c`` so the system is
    consistent; solvers return the zero-mean pressure.
    """
    _check_mesh(nx, ny, 1)
    t0 = time.perf_counter()
    hx, hy = 1.0 / nx, 1.0 / ny
    kx, ky = 2 * nx + 1, 2 * ny + 1
    nodes = kx * ky
    ne = nx * ny
    xi, eta, wq, phi, dxi, deta, psi = _reference_tables(3)
    det = 0.25 * hx * hy
    gx = dxi * (2.0 / hx)
    gy = deta * (2.0 / hy)

    # uniform mesh: one local matrix for all elements
    K = det * (gx * wq) @ gx.T + det * (gy * wq) @ gy.T            # (9, 9)
    K = 0.5 * (K + K.T)  # exact symmetry survives the ordered global sum
    Bx = -det * (gx * wq) @ psi.T                                   # (9, 3)
    By = -det * (gy * wq) @ psi.T

    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ex, ey = ex.ravel(), ey.ravel()
    a = np.tile(np.arange(3), 3)
    b = np.repeat(np.arange(3), 3)
    conn = (2 * ey[:, None] + b[None, :]) * kx + (2 * ex[:, None] + a[None, :])  # (ne, 9)

    rr = np.repeat(conn, 9, axis=1).ravel()
    cc = np.tile(conn, (1, 9)).ravel()
    Kfull = sps.coo_matrix((np.tile(K.ravel(), ne), (rr, cc)), shape=(nodes, nodes)).tocsr()

    pcols = 3 * np.arange(ne)[:, None] + np.arange(3)[None, :]      # (ne, 3)
    br = np.repeat(conn, 3, axis=1).ravel()
    bc = np.tile(pcols, (1, 9)).ravel()
    Bxf = sps.coo_matrix((np.tile(Bx.ravel(), ne), (br, bc)), shape=(nodes, 3 * ne)).tocsr()
    Byf = sps.coo_matrix((np.tile(By.ravel(), ne), (br, bc)), shape=(nodes, 3 * ne)).tocsr()

    # load vector; quadrature points mapped per element
    x0 = ex * hx
    y0 = ey * hy
    xq = x0[:, None] + (xi[None, :] + 1.0) * (0.5 * hx)
    yq = y0[:, None] + (eta[None, :] + 1.0) * (0.5 * hy)
    f1, f2 = stokes_force(xq, yq)
    F1 = np.bincount(conn.ravel(), weights=((f1 * wq * det) @ phi.T).ravel(), minlength=nodes)
    F2 = np.bincount(conn.ravel(), weights=((f2 * wq * det) @ phi.T).ravel(), minlength=nodes)

    ni, nj = np.meshgrid(np.arange(kx), np.arange(ky), indexing="xy")
    ni, nj = ni.ravel(), nj.ravel()
    X, Y = ni * (0.5 * hx), nj * (0.5 * hy)
    boundary = (ni == 0) | (ni == kx - 1) | (nj == 0) | (nj == ky - 1)
    inner_nodes = np.flatnonzero(~boundary)
    bnd_nodes = np.flatnonzero(boundary)
    U1, U2 = stokes_velocity(X, Y)

    Kii = Kfull[inner_nodes][:, inner_nodes]
    Kib = Kfull[inner_nodes][:, bnd_nodes]
    W = sps.block_diag([Kii, Kii], format="csr")
    g = np.concatenate([F1[inner_nodes] - Kib @ U1[bnd_nodes], F2[inner_nodes] - Kib @ U2[bnd_nodes]])
    A = sps.vstack([Bxf[inner_nodes], Byf[inner_nodes]]).tocsr()
    r = -(Bxf[bnd_nodes].T @ U1[bnd_nodes] + Byf[bnd_nodes].T @ U2[bnd_nodes])
    c = np.zeros(3 * ne)
    c[0::3] = 1.0
    r = r - (c @ r) / (c @ c) * c

    raw = SaddleSystem(SparseMatrix.from_scipy(W), SparseMatrix.from_scipy(A), g, r)
    system, ds, rs = _finish(raw, equilibrate)
    exact_w = np.concatenate([U1[inner_nodes], U2[inner_nodes]])
    exact_p = _project_p1(stokes_pressure, x0, y0, hx, hy)
    fem = {"conn": conn, "inner_nodes": inner_nodes, "bnd_nodes": bnd_nodes, "U1": U1, "U2": U2,
           "x0": x0, "y0": y0, "null_pressure": c}
    return ProblemInstance(system, raw, ds, rs, exact_w, exact_p, "fem-q2p1", nx, ny, hx, hy,
                           velocity=stokes_velocity, pressure=stokes_pressure,
                           assembly_time=time.perf_counter() - t0, fem=fem)


def _project_p1(func, x0, y0, hx, hy):
    # element-wise L2 projection onto {1, xi, eta}; the basis is orthogonal with norms 4, 4/3, 4/3
    xi, eta, wq, _, _, _, psi = _reference_tables(3)
    vals = func(x0[:, None] + (xi + 1.0) * 0.5 * hx, y0[:, None] + (eta + 1.0) * 0.5 * hy)
    coef = (vals * wq) @ psi.T / np.array([4.0, 4.0 / 3.0, 4.0 / 3.0])
    return coef.ravel()


def _fem_l2_errors(inst, w, p):
    fem = inst.fem
    nq = 4
    xi, eta, wq, phi, _, _, psi = _reference_tables(nq)
    det = 0.25 * inst.hx * inst.hy
    full1, full2 = fem["U1"].copy(), fem["U2"].copy()
    k = fem["inner_nodes"].size
    full1[fem["inner_nodes"]] = w[:k]
    full2[fem["inner_nodes"]] = w[k:]
    conn = fem["conn"]
    xq = fem["x0"][:, None] + (xi + 1.0) * 0.5 * inst.hx
    yq = fem["y0"][:, None] + (eta + 1.0) * 0.5 * inst.hy
    e1, e2 = stokes_velocity(xq, yq)
    e1 = full1[conn] @ phi - e1
    e2 = full2[conn] @ phi - e2
    eu = math.sqrt(det * float(np.sum((e1**2 + e2**2) * wq)))
    ep = p.reshape(-1, 3) @ psi - stokes_pressure(xq, yq)
    epn = math.sqrt(det * float(np.sum(ep**2 * wq)))
    return eu, epn


def error_norms(inst, w, p, scaled=None):
    """Errors of ``(w, p)`` against the exact solution.

    ``(w, p)`` are in the variables of ``inst.system`` unless ``scaled=False``
    says they are already raw. For finite elements the pressure is shifted to
    zero mean before comparison.
    """
    w = as_vector(w, inst.m, "w")
    p = as_vector(p, inst.n, "p")
    if scaled is None:
        scaled = inst.equilibrated
    if scaled:
        w, p = inst.unscale(w, p)
    ew = w - inst.exact_w
    Wr = inst.raw_system.W
    num = float(ew @ (Wr @ ew))
    den = float(inst.exact_w @ (Wr @ inst.exact_w))
    errM = math.sqrt(max(num, 0.0) / den) if den > 0 else math.sqrt(max(num, 0.0))
    if inst.kind == "fem-q2p1":
        c = inst.fem["null_pressure"]
        p = p - (c @ p) / (c @ c) * c
        eu, ep = _fem_l2_errors(inst, w, p)
        return ErrorReport(eu, ep, errM)
    cells = math.sqrt(inst.nx * inst.ny)
    return ErrorReport(float(np.linalg.norm(ew)) / cells, float(np.linalg.norm(p - inst.exact_p)) / cells, errM)


# --- nu sweep ---------------------------------------------------------------


def nu_sweep(inst, nus, cfg=GkbConfig(), inner="cholesky", inner_tol=1e-8, inner_maxit=10000, omega=1.0):
    """One solve per value of nu; failures are recorded in the row, not raised.

    Each row holds ``nu, iterations, converged, termination_reason, err2_u,
    err2_p, errM_u, lower_bound, time, error``.
    """
    rows = []
    for nu in nus:
        row = {"nu": float(nu), "iterations": None, "converged": False, "termination_reason": None,
               "err2_u": None, "err2_p": None, "errM_u": None, "lower_bound": None, "time": None, "error": None}
        t0 = time.perf_counter()
        try:
            c = GkbConfig(nu=float(nu), tol=cfg.tol, delay=cfg.delay, maxit=cfg.maxit, monitor=cfg.monitor)
            solver = make_inner_solver(inner, tol=inner_tol, maxit=inner_maxit, omega=omega)
            w, p, rep = solve(inst.system, c, solver)
            err = error_norms(inst, w, p)
            row.update(iterations=rep.iterations, converged=rep.converged,
                       termination_reason=rep.termination_reason, **err.to_dict(),
                       lower_bound=rep.final_estimate if rep.lower_bound_estimates else None)
        except (GkbError, ArithmeticError, MemoryError, ValueError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            row["termination_reason"] = "error"
        row["time"] = time.perf_counter() - t0
        rows.append(row)
    return rows


# --- exchange format --------------------------------------------------------


def _vector_matrix(v):
    v = np.asarray(v, dtype=float)
    return SparseMatrix.from_scipy(sps.csr_matrix(v.reshape(-1, 1)))


def export_instance(inst_or_system, directory, meta=None):
    """Write ``W.mtx``, ``A.mtx``, ``g.mtx``, ``r.mtx`` and ``problem.json`` into ``directory``.

    The exported system is the one a solver sees (``inst.system``).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if isinstance(inst_or_system, ProblemInstance):
        sysm = inst_or_system.system
        info = inst_or_system.mesh_info()
    else:
        sysm = inst_or_system
        info = {"kind": "external", "m": sysm.m, "n": sysm.n}
    write_matrix_market(sysm.W, d / "W.mtx", symmetric=True)
    write_matrix_market(sysm.A, d / "A.mtx")
    write_matrix_market(_vector_matrix(sysm.g), d / "g.mtx")
    write_matrix_market(_vector_matrix(sysm.r), d / "r.mtx")
    info = {"format_version": 1, **info, "files": {"W": "W.mtx", "A": "A.mtx", "g": "g.mtx", "r": "r.mtx"},
            "defaults": {"gkb_nu": 0.0, "gkb_delay": 5}, **(meta or {})}
    (d / "problem.json").write_text(json.dumps(info, indent=2) + "\n")
    return d


def _read_vector(path, length, name):
    M = read_matrix_market(path)
    if M.ncols != 1:
        raise DimensionMismatchError(f"{name} (column vector)", 1, M.ncols)
    if M.nrows != length:
        raise DimensionMismatchError(f"{name} length vs A", length, M.nrows)
    return M.toarray().ravel()


def load_system(directory):
    """Read a directory written by :func:`export_instance` (``g``/``r`` default to zero)."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    W = read_matrix_market(d / "W.mtx")
    A = read_matrix_market(d / "A.mtx")
    m, n = A.shape
    g = _read_vector(d / "g.mtx", m, "g") if (d / "g.mtx").exists() else np.zeros(m)
    r = _read_vector(d / "r.mtx", n, "r") if (d / "r.mtx").exists() else np.zeros(n)
    meta = json.loads((d / "problem.json").read_text()) if (d / "problem.json").exists() else {}
    return SaddleSystem(W, A, g, r), meta
