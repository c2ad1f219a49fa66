"""
Fixed-point solvers for the combined scheme.

The default is explicit pseudo-time stepping (Jacobi): every row moves
against its own residual, ``u <- u - dt_x F[u](x)``, which preserves the
comparison structure of a monotone scheme when ``dt_x`` is below the inverse
of the row's sensitivity to its own value.  A nonlinear Gauss-Seidel sweep
based on scalar bisection is provided as an accelerator.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, GridFunction
from .operators import Scheme, SchemeConfig
from .problem import DensityPair

__all__ = ["SolveReport", "SolverError", "DivergenceError", "solve", "gauss_seidel_sweep", "initial_iterate"]


@dataclass
class SolveReport:
    iterations: int = 0
    residual: float = math.inf
    wall_time: float = 0.0
    u_max: float = math.nan
    u_min: float = math.nan
    converged: bool = False
    method: str = "jacobi"
    h: float = math.nan
    n_nodes: int = 0
    dt_history: list[tuple[int, float]] = field(default_factory=list)
    log: list[tuple[int, float, float]] = field(default_factory=list)

    def to_text(self) -> str:
        rows = [
            ("method", self.method), ("h", f"{self.h:.17g}"), ("nodes", self.n_nodes),
            ("iterations", self.iterations), ("residual", f"{self.residual:.17g}"),
            ("wall_time", f"{self.wall_time:.6g}"), ("u_max", f"{self.u_max:.17g}"),
            ("u_min", f"{self.u_min:.17g}"), ("converged", str(self.converged).lower()),
            ("dt_changes", len(self.dt_history)),
        ]
        return "".join(f"{k} = {v}\n" for k, v in rows)

    def log_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,residual,dt\n")
        for it, r, dt in self.log:
            buf.write(f"{it},{r:.17g},{dt:.17g}\n")
        return buf.getvalue()


class SolverError(RuntimeError):
    """Iteration cap reached; carries the best iterate and the report."""

    def __init__(self, message: str, best: GridFunction, report: SolveReport):
        super().__init__(message)
        self.best = best
        self.report = report


class DivergenceError(SolverError):
    pass


def initial_iterate(grid: Grid, eps: float = 0.1) -> np.ndarray:
    """``eps (|x - x_c|^2 - C0)`` with ``C0`` above the squared radius of the domain, so it is negative on the closure."""
    x0, x1, y0, y1 = grid.domain
    c = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
    r2 = ((x1 - x0) / 2) ** 2 + ((y1 - y0) / 2) ** 2
    d = grid.points - c
    return eps * (np.einsum("ij,ij->i", d, d) - 1.25 * r2)


def _as_scheme(problem, grid, cfg) -> Scheme:
    if isinstance(problem, Scheme):
        return problem
    dp = problem.densities if hasattr(problem, "densities") else problem
    if not isinstance(dp, DensityPair):
        raise TypeError("problem must be a DensityPair, a manufactured case or a Scheme")
    return Scheme(grid, dp, cfg)


def solve(problem, grid: Grid, cfg: SchemeConfig | None = None, tol: float = 1e-8,
          max_iter: int = 1_000_000, u0=None, theta: float = 0.9, probe_every: int = 10,
          max_time: float | None = None) -> tuple[GridFunction, SolveReport]:
    """Jacobi pseudo-time iteration to ``residual <= tol``.

    ``dt_x = c / K_x`` with ``K_x`` the probed sensitivity of row ``x`` to
    ``u(x)`` and ``c`` a global multiplier that starts at ``theta``, is
    halved when the sensitivity-scaled residual ``max |F / K|`` grows and doubled (up to ``theta``) after 50
    consecutive decreasing steps.  Boundary rows are linear with unit
    sensitivity and are solved exactly by their first step.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    scheme = _as_scheme(problem, grid, cfg)
    start = time.perf_counter()
    u = initial_iterate(grid) if u0 is None else np.array(u0, dtype=float)
    report = SolveReport(h=grid.h, n_nodes=grid.n)

    # Probed sensitivities, refreshed periodically.  A floor from the
    # second-difference scale keeps the step bounded when a row is flat.
    floor = 1.0 / grid.h ** 2

    def sensitivity(v, Fv):
        K = scheme.sensitivity(v, delta=1e-7 * max(1.0, float(np.abs(v).max())), base=Fv)
        K[: scheme.n_int] = np.maximum(K[: scheme.n_int], floor)
        K[scheme.n_int:] = 1.0
        return K

    c = theta
    F = scheme.evaluate(u)
    K = sensitivity(u, F)
    res = float(np.abs(F).max())
    # step-control monitor: residual scaled by the row sensitivities, which
    # a monotone scheme with local steps does not increase
    mon = float(np.abs(F / K).max())
    best_u, best_res = u.copy(), res
    report.dt_history.append((0, c))
    streak = 0
    it = 0
    while res > tol:
        if it >= max_iter or (max_time is not None and time.perf_counter() - start > max_time):
            _finish(report, best_u, best_res, it, start, False)
            raise SolverError("iteration cap reached", GridFunction(grid, best_u), report)
        it += 1
        step = c / K
        step[scheme.n_int:] = 1.0
        u_new = u - step * F
        F_new = scheme.evaluate(u_new)
        res_new = float(np.abs(F_new).max())
        if not np.isfinite(res_new):
            _finish(report, best_u, best_res, it, start, False)
            raise DivergenceError("divergence", GridFunction(grid, best_u), report)
        mon_new = float(np.abs(F_new / K).max())
        if mon_new > mon * (1 + 1e-12):
            c *= 0.5
            streak = 0
            report.dt_history.append((it, c))
            if c < 1e-12:
                _finish(report, best_u, best_res, it, start, False)
                raise DivergenceError("divergence", GridFunction(grid, best_u), report)
        else:
            streak += 1
            if streak >= 50 and c < theta:
                c = min(2 * c, theta)
                streak = 0
                report.dt_history.append((it, c))
        u, F, res, mon = u_new, F_new, res_new, mon_new
        if res < best_res:
            best_u, best_res = u.copy(), res
        if it % probe_every == 0:
            K = sensitivity(u, F)
            mon = float(np.abs(F / K).max())
        if it % 100 == 0 or res <= tol:
            report.log.append((it, res, c))
    _finish(report, u, res, it, start, True)
    return GridFunction(grid, u), report


def _finish(report: SolveReport, u, res, it, start, ok):
    report.iterations = it
    report.residual = float(res)
    report.wall_time = time.perf_counter() - start
    report.u_max = float(np.max(u))
    report.u_min = float(np.min(u))
    report.converged = bool(ok)


def _bracketed_root(F, t0: float, f0: float, step: float, tol: float) -> float:
    """Root of a non-decreasing scalar map by geometric bracketing then bisection."""
    if f0 == 0:
        return t0
    direction = -1.0 if f0 > 0 else 1.0
    a, fa = t0, f0
    b = t0 + direction * step
    fb = F(b)
    expansions = 0
    while np.sign(fb) == np.sign(fa) and fb != 0:
        a, fa = b, fb
        step *= 2
        b = t0 + direction * step
        fb = F(b)
        expansions += 1
        if expansions > 200:
            return b
    lo, hi = (a, b) if a < b else (b, a)
    flo = F(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
        fm = F(mid)
        if fm == 0:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gauss_seidel_sweep(u, problem, grid: Grid | None = None, cfg: SchemeConfig | None = None,
                       tol: float = 1e-14) -> GridFunction:
    """One sweep in node order, solving each row for its own value with the others frozen."""
    if isinstance(u, GridFunction):
        grid = u.grid if grid is None else grid
        values = u.values.copy()
    else:
        values = np.array(u, dtype=float)
    if grid is None:
        raise ValueError("grid required")
    scheme = _as_scheme(problem, grid, cfg)
    step = grid.h ** 2
    for node in range(grid.n):
        F = scheme.node_function(values, node)
        t0 = values[node]
        values[node] = _bracketed_root(F, t0, F(t0), step, tol)
    return GridFunction(grid, values)
