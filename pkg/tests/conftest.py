import numpy as np
import pytest

from gkbsaddle import GkbConfig, assemble_poiseuille, make_inner_solver, solve

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session", autouse=True)
def jit_warmup():
    """Compile (or load from cache) every numba kernel before anything is timed."""
    inst = assemble_poiseuille(4, 2)
    for kind in ("cholesky", "cg-jacobi", "cg-ssor"):
        solve(inst.system, GkbConfig(nu=1.0, tol=1e-6), make_inner_solver(kind))
    solve(inst.system, GkbConfig(nu=0.0, tol=1e-6), make_inner_solver("cholesky"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.geomspace(1.0, cond, n)) @ q.T


def random_saddle(rng, m, n, cond_w=10.0):
    """Dense (W, A, g, r) with W SPD and A of full column rank."""
    W = random_spd(rng, m, cond_w)
    W = 0.5 * (W + W.T)
    A = rng.standard_normal((m, n)) / np.sqrt(m)
    return W, A, rng.standard_normal(m), rng.standard_normal(n)


def dense_saddle_solve(W, A, g, r):
    m, n = A.shape
    K = np.block([[W, A], [A.T, np.zeros((n, n))]])
    x = np.linalg.solve(K, np.concatenate([g, r]))
    return x[:m], x[m:]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
