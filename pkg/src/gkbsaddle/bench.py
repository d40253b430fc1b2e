"""Benchmark harness: single runs, refinement studies and thread sweeps."""

import csv
import io
import json
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import GkbError
from .gkb import GkbConfig, equilibrate, solve
from .inner import INNER_KINDS, CgConfig, make_inner_solver
from .problems import assemble_poiseuille, assemble_stokes_q2p1, dof_counts, error_norms, export_instance, load_system
from .sparse import get_num_threads, num_threads

__all__ = ["RunConfig", "BenchReport", "run", "convergence_study", "scaling_sweep", "REPORT_SCHEMA"]

REPORT_SCHEMA = "gkbsaddle.report/1"
PROBLEMS = ("poiseuille", "stokes-q2p1", "matrixmarket")


@dataclass
class RunConfig:
    problem: str = "poiseuille"
    nx: int = 64
    ny: int = 32
    path: str | None = None
    gkb: GkbConfig = field(default_factory=GkbConfig)
    inner: str = "cholesky"
    inner_tol: float = 1e-8
    inner_maxit: int = 10000
    ssor_omega: float = 1.0
    threads: int = 1
    equilibrate: bool | None = None
    export_mm: str | None = None
    output: str | None = None
    format: str = "json"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.gkb, dict):
            self.gkb = GkbConfig(**self.gkb)
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEMS)}")
        if self.problem == "matrixmarket" and not self.path:
            raise ValueError("problem 'matrixmarket' needs a directory path")
        if self.inner not in INNER_KINDS:
            raise ValueError(f"unknown inner solver {self.inner!r}; choose from {', '.join(INNER_KINDS)}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.format not in ("json", "csv"):
            raise ValueError(f"format must be json or csv, got {self.format!r}")
        CgConfig(tol=self.inner_tol, maxit=self.inner_maxit, omega=self.ssor_omega,
                 preconditioner="ssor" if self.inner == "cg-ssor" else "jacobi")
        if self.problem != "matrixmarket":
            for name in ("nx", "ny"):
                v = getattr(self, name)
                if int(v) != v or v < (2 if self.problem == "poiseuille" else 1):
                    raise ValueError(f"{name} too small for {self.problem}: {v}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class BenchReport:
    config: dict
    result: dict
    errors: dict | None
    history: list
    timings: dict
    meta: dict

    def to_dict(self):
        return {"config": self.config, "result": self.result, "errors": self.errors, "history": self.history,
                "timings": self.timings, "meta": self.meta}

    def to_json(self):
        return json.dumps(_finite(self.to_dict()), indent=2)

    def history_csv(self):
        buf = io.StringIO()
        cols = ["step", "zeta", "alpha", "beta", "lower_bound_estimate", "inner_iterations"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.history:
            writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in cols})
        return buf.getvalue()

    def write(self, path, fmt="json"):
        text = self.to_json() + "\n" if fmt == "json" else self.history_csv()
        with open(path, "w") as fh:
            fh.write(text)


def _finite(obj):
    # JSON has no NaN/inf; map them to null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def _meta(cfg):
    return {
        "schema": REPORT_SCHEMA,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "threads": get_num_threads(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }


def _build(cfg):
    eq = cfg.equilibrate
    if cfg.problem == "poiseuille":
        return assemble_poiseuille(cfg.nx, cfg.ny, equilibrate=True if eq is None else eq), None
    if cfg.problem == "stokes-q2p1":
        return assemble_stokes_q2p1(cfg.nx, cfg.ny, equilibrate=False if eq is None else eq), None
    system, meta = load_system(cfg.path)
    if eq:
        system, _, _ = equilibrate(system)
    return None, system


def run(cfg, monitor_stream=None):
    """Assemble or load, solve, measure errors. Solver failures end up in the report.

    Input problems (bad files, dimension mismatches) raise; the CLI maps them
    to its own exit code.
    """
    timings = {}
    with num_threads(cfg.threads):
        t0 = time.perf_counter()
        inst, system = _build(cfg)
        if inst is not None:
            system = inst.system
        timings["assembly"] = time.perf_counter() - t0
        if cfg.export_mm:
            export_instance(inst if inst is not None else system, cfg.export_mm)
        inner = make_inner_solver(cfg.inner, cfg.inner_tol, cfg.inner_maxit, cfg.ssor_omega)
        result = {"status": "ok", "m": system.m, "n": system.n}
        errors = None
        history = []
        t0 = time.perf_counter()
        try:
            w, p, rep = solve(system, cfg.gkb, inner, monitor_stream=monitor_stream)
        except (GkbError, ArithmeticError, MemoryError) as exc:
            result.update(status="error", converged=False, termination_reason="error",
                          message=f"{type(exc).__name__}: {exc}")
            timings["solve_total"] = time.perf_counter() - t0
            return BenchReport(cfg.to_dict(), result, None, [], timings, _meta(cfg))
        timings["solve_total"] = time.perf_counter() - t0
        timings.update({f"phase_{k}": v for k, v in rep.wall_times.items()})
        result.update(rep.to_dict())
        result["inner_solver"] = inner.describe()
        if not rep.converged:
            result["status"] = "not_converged"
        history = rep.history_rows()
        if inst is not None:
            errors = error_norms(inst, w, p).to_dict()
        res_w, res_p = system.residual(w, p)
        result["residual_norms"] = {"momentum": float(np.linalg.norm(res_w)),
                                    "constraint": float(np.linalg.norm(res_p))}
    return BenchReport(cfg.to_dict(), result, errors, history, timings, _meta(cfg))


def _order(a, b):
    return math.log2(a / b) if a and b and a > 0 and b > 0 else None


def convergence_study(problem, sizes, cfg=None, tol_from_error=False):
    """Solve on each ``(nx, ny)`` and report errors plus observed orders.

    ``cfg`` is a :class:`RunConfig` template (mesh fields are overwritten).
    With ``tol_from_error`` each solve uses ``tau = (errM_u / 10)^2`` where
    ``errM_u`` comes from a tight preliminary solve, i.e. the iterative error
    sits one order below the discretization error.
    """
    cfg = cfg or RunConfig(problem=problem)
    kind = {"poiseuille": "fvm-poiseuille", "stokes-q2p1": "fem-q2p1"}[problem]
    rows = []
    for nx, ny in sizes:
        dof, dm, da = dof_counts(kind, nx, ny)
        row = {"nx": nx, "ny": ny, "dof": dof, "dof_M": dm, "dof_A": da}
        try:
            c = RunConfig(**{**cfg.to_dict(), "problem": problem, "nx": nx, "ny": ny, "output": None,
                             "export_mm": None})
            if tol_from_error:
                tight = run(RunConfig(**{**c.to_dict(), "gkb": {**c.to_dict()["gkb"], "tol": 1e-13}}))
                tau = (tight.errors["errM_u"] / 10.0) ** 2
                c = RunConfig(**{**c.to_dict(), "gkb": {**c.to_dict()["gkb"], "tol": tau}})
            rep = run(c)
            row.update(tol=c.gkb.tol, iterations=rep.result.get("iterations"),
                       converged=rep.result.get("converged"), **(rep.errors or {}))
            if rep.result["status"] == "error":
                row["error"] = rep.result["message"]
        except (GkbError, ArithmeticError, MemoryError, ValueError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    for prev, cur in zip(rows, rows[1:]):
        for key in ("err2_u", "err2_p", "errM_u"):
            if key in prev and key in cur:
                cur[f"order_{key}"] = _order(prev[key], cur[key])
    return rows


def scaling_sweep(cfg, thread_counts, repeats=1):
    """Thread-level strong scaling of one process (not an MPI experiment).

    Each row holds ``threads, time, speedup, iterations, zeta_checksum``;
    ``time`` is the best of ``repeats`` solve times.
    """
    counts = list(thread_counts)
    if not counts or any(t < 1 for t in counts) or counts != sorted(counts):
        raise ValueError("thread counts must be ascending and >= 1")
    rows = []
    for t in counts:
        best = math.inf
        for _ in range(repeats):
            rep = run(RunConfig(**{**cfg.to_dict(), "threads": t, "output": None, "export_mm": None}))
            best = min(best, rep.timings["solve_total"])
        zs = [h["zeta"] for h in rep.history]
        rows.append({"threads": t, "time": best, "iterations": rep.result.get("iterations"),
                     "zeta_checksum": math.fsum(abs(z) for z in zs)})
    base = rows[0]["time"] if rows[0]["threads"] == 1 else None
    for row in rows:
        row["speedup"] = base / row["time"] if base else None
    return {"experiment": "shared-memory thread sweep (single process, not MPI)", "rows": rows}
