"""Conic solver contract and backend adapters.

The default backend is Clarabel (interior-point, deterministic); cvxopt's
``conelp`` is used as a fallback when Clarabel is unavailable. Both consume
the :class:`~druopf.conic.ConicProgram` standard form. A Ruiz equilibration
pass (uniform within each cone block, so cone geometry is preserved) is
applied before the backend unless disabled.

Settings can be overridden through ``DRUOPF_SOLVER_*`` environment variables:
``FEAS_TOL``, ``GAP_TOL``, ``MAX_ITER``, ``SCALING``, ``BACKEND``.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .conic import ConicProgram, StandardForm


class SolverStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"
    NUMERICAL_ERROR = "numerical_error"


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    scaling: str = "ruiz"  # "none" or "ruiz"
    backend: str = "auto"  # "auto", "clarabel", "cvxopt"
    verbose: bool = False

    def __post_init__(self) -> None:
        if not (self.feas_tol > 0 and self.gap_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.scaling not in ("none", "ruiz"):
            raise ValueError(f"unknown scaling {self.scaling!r}")

    @classmethod
    def from_env(cls, **overrides) -> "SolverSettings":
        env = os.environ
        kwargs = {}
        if "DRUOPF_SOLVER_FEAS_TOL" in env:
            kwargs["feas_tol"] = float(env["DRUOPF_SOLVER_FEAS_TOL"])
        if "DRUOPF_SOLVER_GAP_TOL" in env:
            kwargs["gap_tol"] = float(env["DRUOPF_SOLVER_GAP_TOL"])
        if "DRUOPF_SOLVER_MAX_ITER" in env:
            kwargs["max_iter"] = int(env["DRUOPF_SOLVER_MAX_ITER"])
        if "DRUOPF_SOLVER_SCALING" in env:
            kwargs["scaling"] = env["DRUOPF_SOLVER_SCALING"]
        if "DRUOPF_SOLVER_BACKEND" in env:
            kwargs["backend"] = env["DRUOPF_SOLVER_BACKEND"]
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class SolverResult:
    status: SolverStatus
    primal: Optional[np.ndarray]
    dual: Optional[np.ndarray]
    objective: float
    iterations: int
    solve_time: float
    backend: str = ""

    @property
    def ok(self) -> bool:
        return self.status is SolverStatus.OPTIMAL


# ---------------------------------------------------------------------------
# Equilibration


def _ruiz_equilibrate(sf: StandardForm, passes: int = 4):
    """Row/column scaling; rows of one SOC block share a single factor."""
    n = sf.c.shape[0]
    blocks: List[sp.csc_matrix] = [sf.a_eq, sf.a_le] + [f for f, _ in sf.cones]
    uniform = [False, False] + [True] * len(sf.cones)
    row_scales = [np.ones(b.shape[0]) for b in blocks]
    col_scale = np.ones(n)

    for _ in range(passes):
        col_max = np.zeros(n)
        scaled = []
        for b, rs in zip(blocks, row_scales):
            m = sp.diags(rs) @ b @ sp.diags(col_scale)
            scaled.append(m)
            if m.nnz:
                col_max = np.maximum(col_max, np.abs(m).max(axis=0).toarray().ravel())
        nz = col_max > 0
        col_scale[nz] /= np.sqrt(col_max[nz])
        for k, (b, rs, uni) in enumerate(zip(blocks, row_scales, uniform)):
            m = sp.diags(rs) @ b @ sp.diags(col_scale)
            if m.shape[0] == 0 or m.nnz == 0:
                continue
            row_max = np.abs(m).max(axis=1).toarray().ravel()
            if uni:
                peak = row_max.max()
                if peak > 0:
                    rs /= math.sqrt(peak)
            else:
                pos = row_max > 0
                rs[pos] /= np.sqrt(row_max[pos])

    d_eq, d_le = row_scales[0], row_scales[1]
    scaled = StandardForm(
        c=sf.c * col_scale,
        c0=sf.c0,
        a_eq=sp.diags(d_eq) @ sf.a_eq @ sp.diags(col_scale),
        b_eq=sf.b_eq * d_eq,
        a_le=sp.diags(d_le) @ sf.a_le @ sp.diags(col_scale),
        b_le=sf.b_le * d_le,
        cones=[
            (
                sp.diags(row_scales[2 + k]) @ f @ sp.diags(col_scale),
                g * row_scales[2 + k],
            )
            for k, (f, g) in enumerate(sf.cones)
        ],
    )
    return scaled, col_scale, row_scales


# ---------------------------------------------------------------------------
# Backends


def _available_backends() -> List[str]:
    out = []
    try:
        import clarabel  # noqa: F401

        out.append("clarabel")
    except ImportError:
        pass
    try:
        import cvxopt  # noqa: F401

        out.append("cvxopt")
    except ImportError:
        pass
    return out


def _solve_clarabel(sf: StandardForm, settings: SolverSettings):
    import clarabel

    n = sf.c.shape[0]
    mats = [sf.a_eq, sf.a_le]
    rhs = [sf.b_eq, sf.b_le]
    cones = [
        clarabel.ZeroConeT(sf.a_eq.shape[0]),
        clarabel.NonnegativeConeT(sf.a_le.shape[0]),
    ]
    for f, g in sf.cones:
        mats.append(-f)
        rhs.append(g)
        cones.append(clarabel.SecondOrderConeT(f.shape[0]))
    a = sp.vstack([m.tocsc() for m in mats], format="csc") if mats else sp.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    p = sp.csc_matrix((n, n))

    cfg = clarabel.DefaultSettings()
    cfg.verbose = settings.verbose
    cfg.max_iter = settings.max_iter
    tol = max(0.02 * min(settings.feas_tol, settings.gap_tol), 1e-12)
    cfg.tol_feas = tol
    cfg.tol_gap_abs = tol
    cfg.tol_gap_rel = tol
    solver = clarabel.DefaultSolver(p, sf.c, a, b, cones, cfg)
    sol = solver.solve()
    status_name = str(sol.status)
    mapping = {
        "Solved": SolverStatus.OPTIMAL,
        "AlmostSolved": SolverStatus.OPTIMAL,
        "PrimalInfeasible": SolverStatus.INFEASIBLE,
        "AlmostPrimalInfeasible": SolverStatus.INFEASIBLE,
        "DualInfeasible": SolverStatus.UNBOUNDED,
        "AlmostDualInfeasible": SolverStatus.UNBOUNDED,
        "MaxIterations": SolverStatus.MAX_ITER,
    }
    status = mapping.get(status_name, SolverStatus.NUMERICAL_ERROR)
    x = np.asarray(sol.x) if status is SolverStatus.OPTIMAL else None
    z = np.asarray(sol.z) if status is SolverStatus.OPTIMAL else None
    return status, x, z, int(sol.iterations), float(sol.solve_time)


def _solve_cvxopt(sf: StandardForm, settings: SolverSettings):
    from cvxopt import matrix, solvers, spmatrix

    def to_cvx(m: sp.csc_matrix):
        coo = m.tocoo()
        return spmatrix(
            coo.data.tolist(),
            coo.row.tolist(),
            coo.col.tolist(),
            size=m.shape,
        )

    n = sf.c.shape[0]
    g_blocks = [sf.a_le]
    h_blocks = [sf.b_le]
    q_dims = []
    for f, g in sf.cones:
        g_blocks.append(-f)
        h_blocks.append(g)
        q_dims.append(f.shape[0])
    g_mat = sp.vstack([m.tocsc() for m in g_blocks], format="csc")
    h_vec = np.concatenate(h_blocks)
    opts = {
        "show_progress": settings.verbose,
        "maxiters": settings.max_iter,
        "abstol": 0.1 * settings.gap_tol,
        "reltol": 0.1 * settings.gap_tol,
        "feastol": 0.1 * settings.feas_tol,
    }
    sol = solvers.conelp(
        matrix(sf.c),
        to_cvx(g_mat),
        matrix(h_vec),
        dims={"l": sf.a_le.shape[0], "q": q_dims, "s": []},
        A=to_cvx(sf.a_eq),
        b=matrix(sf.b_eq),
        options=opts,
    )
    status_map = {
        "optimal": SolverStatus.OPTIMAL,
        "primal infeasible": SolverStatus.INFEASIBLE,
        "dual infeasible": SolverStatus.UNBOUNDED,
    }
    status = status_map.get(sol["status"], SolverStatus.NUMERICAL_ERROR)
    x = np.asarray(sol["x"]).ravel() if sol["x"] is not None else None
    if status is not SolverStatus.OPTIMAL:
        x = None
    iterations = int(sol.get("iterations", 0))
    return status, x, None, iterations, 0.0


def solve(program: ConicProgram, settings: Optional[SolverSettings] = None) -> SolverResult:
    """Solve a conic program, returning a contract-checked result.

    Deterministic for identical inputs and settings. A result with status
    ``optimal`` satisfies every raw row and cone of ``program`` within
    ``feas_tol``; failures of that re-check are downgraded to
    ``numerical_error`` rather than reported as optimal.
    """
    settings = settings or SolverSettings.from_env()
    backend = settings.backend
    if backend == "auto":
        available = _available_backends()
        if not available:
            raise RuntimeError("no conic backend available (clarabel, cvxopt)")
        backend = available[0]

    sf = program.standard_form()
    col_scale = np.ones(program.n_vars)
    if settings.scaling == "ruiz":
        sf, col_scale, _ = _ruiz_equilibrate(sf)

    start = time.perf_counter()
    try:
        if backend == "clarabel":
            status, x, dual, iterations, solve_time = _solve_clarabel(sf, settings)
        elif backend == "cvxopt":
            status, x, dual, iterations, solve_time = _solve_cvxopt(sf, settings)
        else:
            raise ValueError(f"unknown backend {backend!r}")
    except (ValueError, RuntimeError):
        raise
    except Exception:
        # backends must never crash the process on ill-conditioned input
        return SolverResult(
            status=SolverStatus.NUMERICAL_ERROR,
            primal=None,
            dual=None,
            objective=math.nan,
            iterations=0,
            solve_time=time.perf_counter() - start,
            backend=backend,
        )
    if not solve_time:
        solve_time = time.perf_counter() - start

    primal = None
    objective = math.nan
    if x is not None:
        primal = x * col_scale
        objective = program.objective_value(primal)
        if status is SolverStatus.OPTIMAL:
            resid = program.residuals(primal)
            if resid.max_violation > settings.feas_tol:
                status = SolverStatus.NUMERICAL_ERROR
    return SolverResult(
        status=status,
        primal=primal,
        dual=dual,
        objective=objective,
        iterations=iterations,
        solve_time=solve_time,
        backend=backend,
    )
