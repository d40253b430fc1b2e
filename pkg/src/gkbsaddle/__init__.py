"""Saddle-point solver based on generalized Golub-Kahan bidiagonalization."""

__version__ = "0.1.0"

from .errors import (DimensionMismatchError, GkbError, IllConditionedError, MatrixMarketError,  # noqa: E402
                     MemoryGuardError, NotPositiveDefiniteError, SymmetryError, ZeroDiagonalError)
from .sparse import (SparseMatrix, diag_of_normal_product, num_threads, set_num_threads, spmv,  # noqa: E402
                     spmv_transpose, weighted_norm)
from .mmio import read_matrix_market, write_matrix_market  # noqa: E402
from .inner import (CgConfig, CgSolver, CholeskySolver, InnerSolver, cg_solve, cholesky_setup,  # noqa: E402
                    cholesky_solve, make_inner_solver, precond_apply)
from .gkb import (GkbConfig, SaddleSystem, SolveReport, augment, back_transform, equilibrate,  # noqa: E402
                  gkb_iterate, orthogonality_diagnostics, solve, stopping_check, transform_rhs,
                  unscale_solution)
from .problems import (ErrorReport, ProblemInstance, assemble_poiseuille, assemble_stokes_q2p1,  # noqa: E402
                       dof_counts, error_norms, nu_sweep)
from .bench import BenchReport, RunConfig, convergence_study, run, scaling_sweep  # noqa: E402
