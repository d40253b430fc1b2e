"""Command-line entry point: ``gkbsaddle [options]``.

Exit codes: 0 converged, 1 not converged, 2 invalid input, 3 solver error.
"""

import argparse
import sys

from .bench import PROBLEMS, RunConfig, run
from .errors import DimensionMismatchError, MatrixMarketError
from .gkb import GkbConfig
from .inner import INNER_KINDS

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3


def build_parser():
    ap = argparse.ArgumentParser(prog="gkbsaddle",
                                 description="Solve a saddle-point test problem with Golub-Kahan bidiagonalization.")
    ap.add_argument("--problem", default="poiseuille",
                    help=f"one of {', '.join(p for p in PROBLEMS if p != 'matrixmarket')}, "
                         "or a directory holding W.mtx, A.mtx and optionally g.mtx, r.mtx")
    ap.add_argument("--nx", type=int, default=64)
    ap.add_argument("--ny", type=int, default=32)
    ap.add_argument("--gkb-nu", type=float, default=0.0, help="augmentation parameter, N = I/nu (0: no augmentation)")
    ap.add_argument("--gkb-tol", type=float, default=1e-5, help="lower-bound stopping tolerance")
    ap.add_argument("--gkb-delay", type=int, default=5, help="look-ahead steps of the error estimate")
    ap.add_argument("--gkb-maxit", type=int, default=10000)
    ap.add_argument("--gkb-monitor", action="store_true", help="print the lower bound estimate to stderr")
    ap.add_argument("--inner", choices=INNER_KINDS, default="cholesky")
    ap.add_argument("--inner-tol", type=float, default=None,
                    help="relative residual tolerance of CG (default: gkb-tol / 10)")
    ap.add_argument("--inner-maxit", type=int, default=10000)
    ap.add_argument("--ssor-omega", type=float, default=1.0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--equilibrate", choices=("on", "off"), default=None,
                    help="block diagonal scaling (default: on for poiseuille, off otherwise)")
    ap.add_argument("--export-mm", metavar="DIR", help="write the assembled system as MatrixMarket files")
    ap.add_argument("--output", metavar="PATH", help="write the report here instead of stdout")
    ap.add_argument("--format", choices=("json", "csv"), default="json",
                    help="json: full report; csv: per-iteration history")
    ap.add_argument("--seed", type=int, default=0)
    return ap


def config_from_args(args):
    if args.problem in ("poiseuille", "stokes-q2p1"):
        problem, path = args.problem, None
    else:
        problem, path = "matrixmarket", args.problem
    gkb = GkbConfig(nu=args.gkb_nu, tol=args.gkb_tol, delay=args.gkb_delay, maxit=args.gkb_maxit,
                    monitor=args.gkb_monitor)
    inner_tol = args.inner_tol if args.inner_tol is not None else gkb.tol / 10.0
    eq = None if args.equilibrate is None else args.equilibrate == "on"
    return RunConfig(problem=problem, nx=args.nx, ny=args.ny, path=path, gkb=gkb, inner=args.inner,
                     inner_tol=inner_tol, inner_maxit=args.inner_maxit, ssor_omega=args.ssor_omega,
                     threads=args.threads, equilibrate=eq, export_mm=args.export_mm, output=args.output,
                     format=args.format, seed=args.seed)


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = config_from_args(args)
        report = run(cfg, monitor_stream=sys.stderr)
    except (ValueError, FileNotFoundError, MatrixMarketError, DimensionMismatchError) as exc:
        print(f"gkbsaddle: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = report.to_json() + "\n" if cfg.format == "json" else report.history_csv()
    if cfg.output:
        report.write(cfg.output, cfg.format)
    else:
        sys.stdout.write(text)
    status = report.result["status"]
    if status == "error":
        print(f"gkbsaddle: solver error: {report.result['message']}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK if status == "ok" else EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
