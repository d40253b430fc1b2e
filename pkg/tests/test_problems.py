import json

import numpy as np
import pytest
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from gkbsaddle import (DimensionMismatchError, GkbConfig, SparseMatrix, assemble_poiseuille, assemble_stokes_q2p1,
                       dof_counts, error_norms, nu_sweep, solve)
from gkbsaddle.gkb import SaddleSystem
from gkbsaddle.problems import ErrorReport, export_instance, load_system

# published reference errors on the 512x256 channel; O(h^2) scales them by 16 at 128x64
REF_ERR2_U_512 = 6.50e-06
REF_ERRM_U_512 = 4.01e-05


def direct(system):
    K = sps.bmat([[system.W.to_scipy(), system.A.to_scipy()], [system.A.to_scipy().T, None]]).tocsc()
    x = spla.spsolve(K, np.concatenate([system.g, system.r]))
    return x[:system.m], x[system.m:]


class TestDofCounts:
    def test_table_sizes(self):
        assert dof_counts("fvm-poiseuille", 512, 256) == (393216, 262144, 131072)

    def test_q2p1_large(self):
        dof, m, n = dof_counts("fem-q2p1", 1024, 1024)
        assert n == 3 * 1024**2 and round(n / 1e6, 1) == 3.1
        assert round(m / 1e6, 1) == 8.4 and abs(m - 8.3e6) / 8.3e6 < 0.02

    def test_smallest_q2p1(self):
        inst = assemble_stokes_q2p1(1, 1)
        assert (inst.m, inst.n) == (2, 3) == dof_counts("fem-q2p1", 1, 1)[1:]

    def test_assembled_sizes_match(self):
        for nx, ny in ((4, 2), (6, 3)):
            assert dof_counts("fvm-poiseuille", nx, ny)[1:] == (assemble_poiseuille(nx, ny).m,
                                                                assemble_poiseuille(nx, ny).n)
        for nx, ny in ((2, 2), (3, 5)):
            inst = assemble_stokes_q2p1(nx, ny)
            assert dof_counts("fem-q2p1", nx, ny)[1:] == (inst.m, inst.n)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            dof_counts("fem-p2p1", 2, 2)


class TestPoiseuille:
    def test_small_structure(self):
        inst = assemble_poiseuille(4, 2, equilibrate=False)
        assert (inst.m, inst.n) == (16, 8)
        W = inst.raw_system.W.toarray()
        assert np.array_equal(W, W.T)
        # the 4x2 grid has no cell away from every boundary: check interior couplings instead
        big = assemble_poiseuille(8, 6, equilibrate=False)
        Wb = big.raw_system.W.toarray()[:48, :48]
        for j in range(1, 5):
            for i in range(1, 7):
                assert abs(Wb[j * 8 + i].sum()) < 1e-14

    def test_gradient_is_minus_divergence(self):
        inst = assemble_poiseuille(16, 8, equilibrate=False)
        nx, ny, hx, hy = 16, 8, inst.hx, inst.hy
        rng = np.random.default_rng(3)
        u = rng.standard_normal((ny, nx))
        v = rng.standard_normal((ny, nx))
        # face fluxes with linear interpolation, zero-gradient outlet, homogeneous Dirichlet elsewhere
        ue = np.concatenate([0.5 * (u[:, :-1] + u[:, 1:]), u[:, -1:]], axis=1)
        uw = np.concatenate([np.zeros((ny, 1)), 0.5 * (u[:, :-1] + u[:, 1:])], axis=1)
        vn = np.concatenate([0.5 * (v[:-1] + v[1:]), np.zeros((1, nx))], axis=0)
        vs = np.concatenate([np.zeros((1, nx)), 0.5 * (v[:-1] + v[1:])], axis=0)
        div = hy * (ue - uw) + hx * (vn - vs)
        At = inst.raw_system.A.toarray().T
        np.testing.assert_allclose(At @ np.concatenate([u.ravel(), v.ravel()]), -div.ravel(), atol=1e-13)

    def test_divergence_of_exact_field(self):
        for ny in (8, 16, 32):
            inst = assemble_poiseuille(2 * ny, ny, equilibrate=False)
            res = inst.raw_system.A.to_scipy().T @ inst.exact_w - inst.raw_system.r
            h = inst.hy
            # per unit area
            assert np.abs(res / (inst.hx * inst.hy)).max() <= h * h

    def test_psd(self, rng):
        W = assemble_poiseuille(16, 8, equilibrate=False).raw_system.W
        for _ in range(50):
            x = rng.standard_normal(W.ncols)
            assert x @ (W @ x) / (x @ x) >= -1e-10

    def test_direct_error_matches_reference_trend(self):
        inst = assemble_poiseuille(128, 64)
        e = error_norms(inst, *direct(inst.system))
        expected = REF_ERR2_U_512 * 16
        assert expected / 2 <= e.err2_u <= expected * 2
        assert REF_ERRM_U_512 * 16 / 10 <= e.errM_u <= REF_ERRM_U_512 * 16 * 10

    def test_order(self):
        errs = []
        for ny in (8, 16, 32, 64):
            inst = assemble_poiseuille(2 * ny, ny)
            errs.append(error_norms(inst, *direct(inst.system)).err2_u)
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all((ratios >= 3.5) & (ratios <= 4.5)), ratios

    def test_rejects_small_mesh(self):
        with pytest.raises(ValueError):
            assemble_poiseuille(1, 4)

    def test_equilibrated_solution_maps_back(self):
        inst = assemble_poiseuille(16, 8)
        raw = assemble_poiseuille(16, 8, equilibrate=False)
        w1, p1 = inst.unscale(*direct(inst.system))
        w2, p2 = direct(raw.system)
        np.testing.assert_allclose(w1, w2, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(p1, p2, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(np.concatenate(inst.scale(w1, p1)), np.concatenate(direct(inst.system)),
                                   rtol=1e-10, atol=1e-12)


class TestQ2P1:
    def test_symmetric_psd(self, rng):
        inst = assemble_stokes_q2p1(4, 3)
        W = inst.system.W.toarray()
        assert np.array_equal(W, W.T)
        assert np.linalg.eigvalsh(W).min() > 0

    def test_constant_pressure_in_kernel(self):
        inst = assemble_stokes_q2p1(4, 4)
        c = inst.fem["null_pressure"]
        assert np.abs(inst.system.A @ c).max() < 1e-13
        assert abs(c @ inst.system.r) < 1e-13

    def test_single_element_hand_values(self):
        # one unit element: only the center bubble (1 - xi^2)(1 - eta^2) is free
        inst = assemble_stokes_q2p1(1, 1)
        np.testing.assert_allclose(inst.system.W.toarray(), 256.0 / 45.0 * np.eye(2), rtol=1e-14)
        np.testing.assert_allclose(inst.system.A.toarray(), [[0, 8 / 9, 0], [0, 0, 8 / 9]], atol=1e-15)

    def test_nonsingular_after_null_mode(self):
        for n in (2, 4, 8):
            inst = assemble_stokes_q2p1(n, n)
            c = inst.fem["null_pressure"]
            K = sps.bmat([[inst.system.W.to_scipy(), inst.system.A.to_scipy(), None],
                          [inst.system.A.to_scipy().T, None, c[:, None]],
                          [None, c[None, :], None]]).toarray()
            assert np.linalg.matrix_rank(K) == K.shape[0]

    def test_refinement(self):
        errs = []
        for n in (4, 8, 16):
            inst = assemble_stokes_q2p1(n, n)
            w, p, rep = solve(inst.system, GkbConfig(tol=1e-14, maxit=500))
            errs.append(error_norms(inst, w, p))
        for a, b in zip(errs, errs[1:]):
            assert a.err2_u / b.err2_u >= 6
            assert a.err2_p / b.err2_p >= 3.5

    def test_interpolant_error(self):
        inst = assemble_stokes_q2p1(8, 8)
        e = error_norms(inst, inst.exact_w, inst.exact_p)
        w, p = direct(inst.system)
        assert e.errM_u == 0.0
        # nodal interpolation of a cubic is O(h^3); the L2 projection of p is optimal
        assert e.err2_u < 1e-3 and e.err2_p <= error_norms(inst, w, p).err2_p + 1e-15


class TestErrorNorms:
    def test_exact_fvm(self):
        inst = assemble_poiseuille(8, 4)
        e = error_norms(inst, inst.exact_w, inst.exact_p, scaled=False)
        assert e == ErrorReport(0.0, 0.0, 0.0)

    def test_single_dof_perturbation(self):
        inst = assemble_poiseuille(8, 4)
        eps = 1e-3
        w = inst.exact_w.copy()
        w[5] += eps
        e = error_norms(inst, w, inst.exact_p, scaled=False)
        assert e.err2_u == pytest.approx(eps / np.sqrt(8 * 4), rel=1e-12)

    def test_dimension_mismatch(self):
        inst = assemble_poiseuille(8, 4)
        with pytest.raises(DimensionMismatchError):
            error_norms(inst, np.zeros(3), inst.exact_p)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ErrorReport(-1.0, 0.0, 0.0)


class TestNuSweep:
    def test_singleton_equals_direct_call(self):
        inst = assemble_poiseuille(16, 8)
        cfg = GkbConfig(nu=0.0, tol=1e-6)
        rows = nu_sweep(inst, [10.0], cfg)
        w, p, rep = solve(inst.system, GkbConfig(nu=10.0, tol=1e-6))
        assert len(rows) == 1
        assert rows[0]["iterations"] == rep.iterations
        assert rows[0]["errM_u"] == error_norms(inst, w, p).errM_u
        assert rows[0]["lower_bound"] == rep.final_estimate

    def test_conditioning_failure_recorded(self):
        inst = assemble_poiseuille(64, 32)
        rows = nu_sweep(inst, [1.0, 1e12, 10.0], GkbConfig(tol=1e-6))
        assert rows[0]["error"] is None and rows[2]["error"] is None
        assert rows[1]["termination_reason"] == "error" and "ill-conditioned" in rows[1]["error"]
        assert rows[1]["iterations"] is None


class TestExport:
    def test_roundtrip(self, tmp_path):
        inst = assemble_poiseuille(8, 4)
        export_instance(inst, tmp_path)
        meta = json.loads((tmp_path / "problem.json").read_text())
        assert meta["kind"] == "fvm-poiseuille" and meta["m"] == 64 and meta["n"] == 32
        sysm, meta2 = load_system(tmp_path)
        assert meta2 == meta
        np.testing.assert_array_equal(sysm.W.toarray(), inst.system.W.toarray())
        np.testing.assert_array_equal(sysm.A.toarray(), inst.system.A.toarray())
        np.testing.assert_array_equal(sysm.g, inst.system.g)
        np.testing.assert_array_equal(sysm.r, inst.system.r)

    def test_mismatched_rhs(self, tmp_path):
        sysm = SaddleSystem(SparseMatrix.identity(3), SparseMatrix.from_dense(np.eye(3)[:, :2]), np.ones(3),
                            np.ones(2))
        export_instance(sysm, tmp_path)
        (tmp_path / "r.mtx").write_text("%%MatrixMarket matrix coordinate real general\n3 1 1\n1 1 1.0\n")
        with pytest.raises(DimensionMismatchError):
            load_system(tmp_path)
