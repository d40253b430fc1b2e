"""Compiled loops behind the sparse kernels, the Cholesky factorization and SSOR.

Everything here works on raw CSR/CSC arrays; the public wrappers live in
:mod:`gkbsaddle.sparse` and :mod:`gkbsaddle.inner`.
"""

import os
import sys

if "numba" not in sys.modules:
    # numba fixes its worker pool size at import time; leave room for thread
    # sweeps on small machines. OpenMP ships with numba wheels and skips a
    # noisy TBB version probe.
    os.environ.setdefault("NUMBA_NUM_THREADS", str(max(4, os.cpu_count() or 1)))
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np  # noqa: E402
from numba import njit, prange  # noqa: E402


@njit(parallel=True, cache=True)
def csr_matvec(indptr, indices, data, x, y):
    # one thread per output row, sequential accumulation inside a row
    for i in prange(y.shape[0]):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        y[i] = acc


@njit(cache=True)
def csr_rmatvec(indptr, indices, data, x, y):
    y[:] = 0.0
    for i in range(indptr.shape[0] - 1):
        xi = x[i]
        for p in range(indptr[i], indptr[i + 1]):
            y[indices[p]] += data[p] * xi


@njit(cache=True)
def csr_column_sq_weighted(indptr, indices, data, weights, out):
    out[:] = 0.0
    for i in range(indptr.shape[0] - 1):
        wi = weights[i]
        for p in range(indptr[i], indptr[i + 1]):
            out[indices[p]] += wi * data[p] * data[p]


# --- Cholesky ---------------------------------------------------------------


@njit(cache=True)
def etree(Cp, Ci, n):
    """Elimination tree of a symmetric matrix given by its full pattern."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True)
def _ereach(Cp, Ci, k, parent, s, w, n):
    # nonzero pattern of row k of L, returned in s[top:n] in topological order
    top = n
    w[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@njit(cache=True)
def column_counts(Cp, Ci, n, parent):
    counts = np.ones(n, dtype=np.int64)
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w, n)
        for t in range(top, n):
            counts[s[t]] += 1
    return counts


@njit(cache=True)
def cholesky_numeric(Cp, Ci, Cx, n, parent, Lp, Li, Lx):
    """Up-looking factorization C = L L^T; returns -1 or the failing row."""
    c = Lp[:-1].copy()
    x = np.zeros(n)
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w, n)
        x[k] = 0.0
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > 0.0:
            return k
        p = c[k]
        c[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return -1


@njit(cache=True)
def lower_solve_csc(Lp, Li, Lx, b):
    x = b.copy()
    n = x.shape[0]
    for j in range(n):
        xj = x[j] / Lx[Lp[j]]
        x[j] = xj
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    return x


@njit(cache=True)
def lower_transpose_solve_csc(Lp, Li, Lx, b):
    x = b.copy()
    n = x.shape[0]
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc / Lx[Lp[j]]
    return x


# --- SSOR -------------------------------------------------------------------


@njit(cache=True)
def ssor_apply(indptr, indices, data, diag, omega, r):
    # z = (2-w)/w * (D/w + L)^-T (D/w) (D/w + L)^-1 r, with L the strict lower part
    n = r.shape[0]
    y = np.empty(n)
    for i in range(n):
        acc = r[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j < i:
                acc -= data[p] * y[j]
        y[i] = acc * omega / diag[i]
    for i in range(n):
        y[i] *= diag[i] / omega
    z = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j > i:
                acc -= data[p] * z[j]
        z[i] = acc * omega / diag[i]
    scale = (2.0 - omega) / omega
    for i in range(n):
        z[i] *= scale
    return z
