"""
Property suites and studies: underestimation, discrete comparison,
monotonicity probes, the one-dimensional comparison counterexample and
convergence tables against manufactured solutions.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .geometry import (
    PWLConvexFunction,
    convex_envelope_pwl,
    integrate_density_over_polytope,
    intersect_convex,
    subgradient_polytope,
)
from .grid import Grid, GridFunction, build_grid, nn_extension, voronoi_cell
from .operators import Scheme, SchemeConfig
from .problem import DensityPair, ManufacturedCase
from .solver import initial_iterate, solve

__all__ = [
    "DiscreteMeasure", "discrete_measure", "underestimation_suite", "UnderestimationReport",
    "comparison_suite", "ComparisonReport", "monotonicity_probe", "Example1D", "demo_1d",
    "convergence_study", "StudyTable", "envelope_lp_oracle", "polytope_area_sampling",
    "random_pwl_instance",
]


# ---------------------------------------------------------------------------
# Discrete measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteMeasure:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())


def discrete_measure(dp: DensityPair, grid: Grid, rtol: float = 1e-10) -> DiscreteMeasure:
    """``mu_i`` = integral of the source density over the Voronoi cell of node ``i``."""
    w = np.empty(grid.n)
    for i in range(grid.n):
        w[i] = integrate_density_over_polytope(voronoi_cell(grid, i), dp.f_values, rtol=rtol)
    return DiscreteMeasure(grid.points, w)


# ---------------------------------------------------------------------------
# Underestimation
# ---------------------------------------------------------------------------

def random_pwl_instance(grid: Grid, Y, rng: np.random.Generator) -> np.ndarray:
    """Node values of a convex PWL function whose subgradient at every node meets the closure of ``Y``.

    Random node data is replaced by its convex envelope; one subgradient per
    node is clamped to ``Y`` and the node values are re-sampled from the
    maximum of the resulting supporting planes.
    """
    p = grid.points
    A = rng.normal(size=(2, 2))
    A = A @ A.T + rng.uniform(0.05, 1.0) * np.eye(2)
    b = rng.normal(scale=0.5, size=2)
    quad = 0.5 * np.einsum("ij,jk,ik->i", p, A, p) + p @ b
    noise = rng.uniform(0, 1) * grid.h * rng.normal(size=grid.n)
    u = convex_envelope_pwl(grid, quad + noise)
    slopes = np.empty((grid.n, 2))
    for i in range(grid.n):
        P = subgradient_polytope(u, i)
        slopes[i] = _project(Y, P.vertices.mean(axis=0))
    offsets = u.values - np.einsum("ij,ij->i", slopes, p)
    vals = np.empty(grid.n)
    for s in range(0, grid.n, 512):
        vals[s:s + 512] = (p[s:s + 512] @ slopes.T + offsets).max(axis=1)
    return vals


def _project(Y, q: np.ndarray) -> np.ndarray:
    if Y.is_disc:
        c = np.asarray(Y.center)
        d = q - c
        r = np.hypot(*d)
        return q if r <= Y.radius else c + d * (Y.radius / r)
    if Y.contains(q):
        return q
    v = Y.vertices
    best, best_d = None, np.inf
    for k in range(len(v)):
        a, e = v[k], v[(k + 1) % len(v)] - v[k]
        t = np.clip((q - a) @ e / (e @ e), 0.0, 1.0)
        z = a + t * e
        d = np.hypot(*(q - z))
        if d < best_d:
            best, best_d = z, d
    return best


@dataclass
class UnderestimationReport:
    trials: int = 0
    skipped: int = 0
    checks: int = 0
    violations: list[dict] = field(default_factory=list)
    min_slack: float = math.inf
    max_F2: float = -math.inf
    max_F3: float = -math.inf
    per_trial: list[tuple[int, float, float, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def trials_csv(self) -> str:
        buf = io.StringIO()
        buf.write("trial,min_slack,max_slack,violations\n")
        for t, lo, hi, nv in self.per_trial:
            buf.write(f"{t},{lo:.17g},{hi:.17g},{nv}\n")
        return buf.getvalue()

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("trial,node,kind,value,bound\n")
        for v in self.violations:
            buf.write(f"{v['trial']},{v['node']},{v['kind']},{v['value']:.17g},{v['bound']:.17g}\n")
        return buf.getvalue()

    def summary(self) -> str:
        return (f"trials = {self.trials}\nskipped = {self.skipped}\nchecks = {self.checks}\n"
                f"violations = {len(self.violations)}\nmin_slack = {self.min_slack:.17g}\n"
                f"max_F2 = {self.max_F2:.17g}\nmax_F3 = {self.max_F3:.17g}\n")


def underestimation_suite(grid: Grid, dp: DensityPair, Y=None, cfg: SchemeConfig | None = None,
                          trials: int = 100, seed: int = 0, tol: float = 1e-10,
                          scheme: Scheme | None = None, mu: DiscreteMeasure | None = None,
                          ) -> UnderestimationReport:
    """Check ``F <= max{(mu_x - int_{du(x)} g) / A_x, 0} - h^alpha`` on random convex PWL data.

    Every interior node is checked with a tolerance ``tol`` on the strict
    slack ``h^alpha``, and the components ``F2`` and ``F3`` are checked to be
    non-positive on their own.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    Y = dp.Y if Y is None else Y
    scheme = scheme or Scheme(grid, dp, cfg)
    mu = mu or discrete_measure(dp, grid)
    A = grid.areas
    Ypoly = Y.as_polygon()
    shift = scheme.shift_h_alpha
    rng = np.random.default_rng(seed)
    rep = UnderestimationReport()
    for t in range(trials):
        try:
            vals = random_pwl_instance(grid, Y, rng)
            u = PWLConvexFunction.certify(grid, vals)
        except ValueError:
            rep.skipped += 1
            continue
        rep.trials += 1
        F1, F2, F3 = scheme.components(vals)
        F = np.maximum(np.maximum(F1, F2), F3) - shift
        n_before = len(rep.violations)
        lo, hi = math.inf, -math.inf
        for i in range(scheme.n_int):
            P = subgradient_polytope(u, i)
            Q = intersect_convex(P.vertices, Ypoly)
            mass = integrate_density_over_polytope(Q, dp.g) if len(Q) >= 3 else 0.0
            bound = max((mu.weights[i] - mass) / A[i], 0.0)
            slack = bound - F[i]
            rep.checks += 1
            lo, hi = min(lo, slack), max(hi, slack)
            if slack < shift - tol:
                rep.violations.append(dict(trial=t, node=i, kind="underestimate", value=float(F[i]), bound=bound))
        rep.min_slack = min(rep.min_slack, lo)
        rep.max_F2 = max(rep.max_F2, float(F2.max()))
        rep.max_F3 = max(rep.max_F3, float(F3.max()))
        for kind, comp in (("F2", F2), ("F3", F3)):
            for i in np.flatnonzero(comp > tol):
                rep.violations.append(dict(trial=t, node=int(i), kind=kind, value=float(comp[i]), bound=0.0))
        rep.per_trial.append((t, lo, hi, len(rep.violations) - n_before))
    return rep


# ---------------------------------------------------------------------------
# Monotonicity and comparison
# ---------------------------------------------------------------------------

def monotonicity_probe(scheme: Scheme, samples: int = 1000, seed: int = 0, tol: float = 1e-12,
                       scale: float = 1.0) -> list[dict]:
    """Random (function, node, perturbation) triples; returns the list of violations.

    The row of node ``x`` must not decrease when ``u(x)`` is raised with the
    neighbours fixed, nor when a single neighbour ``u(y)`` is lowered.
    """
    grid = scheme.grid
    rng = np.random.default_rng(seed)
    p = grid.points
    bad = []
    for s in range(samples):
        A = rng.normal(size=(2, 2))
        u = 0.5 * np.einsum("ij,jk,ik->i", p, A @ A.T, p) + rng.normal(scale=scale * grid.h ** 2, size=grid.n)
        x = int(rng.integers(scheme.n_int))
        F0 = scheme.node_function(u, x)
        base = F0(u[x])
        delta = float(rng.exponential(grid.h ** 2))
        if rng.random() < 0.5:
            new = F0(u[x] + delta)
            what = "self"
        else:
            stencil = _stencil_nodes(scheme, x)
            y = int(rng.choice(stencil))
            v = u.copy()
            v[y] -= delta
            new = scheme.node_function(v, x)(u[x])
            what = f"neighbour {y}"
        if new < base - tol * max(1.0, abs(base)):
            bad.append(dict(sample=s, node=x, perturbation=what, before=base, after=new))
    return bad


def _stencil_nodes(scheme: Scheme, x: int) -> np.ndarray:
    nb = [scheme.plus[:, x], scheme.minus[:, x], scheme.dir_idx[x][scheme.dir_valid[x]].ravel()]
    nb = np.unique(np.concatenate(nb))
    return nb[(nb >= 0) & (nb != x)]


@dataclass
class ComparisonReport:
    candidates: int = 0
    strict_pairs: int = 0
    violations: list[dict] = field(default_factory=list)
    monotonicity_violations: int = 0
    note: str = ""

    @property
    def ok(self) -> bool:
        return not self.violations and self.monotonicity_violations == 0

    def summary(self) -> str:
        s = (f"candidates = {self.candidates}\nstrict_pairs = {self.strict_pairs}\n"
             f"violations = {len(self.violations)}\nmonotonicity_violations = {self.monotonicity_violations}\n")
        return s + (f"note = {self.note}\n" if self.note else "")


def comparison_suite(grid: Grid, dp: DensityPair, Y=None, cfg: SchemeConfig | None = None,
                     seed: int = 0, random_pairs: int = 40, probes: int = 200,
                     scheme: Scheme | None = None) -> ComparisonReport:
    """Strict pairs ``F[u] < F[v]`` must satisfy ``u <= v`` at every node.

    Candidates are the initial solver iterate against steep affine
    supersolutions, and random convex functions against convex
    perturbations of themselves; only pairs that are strict at every node
    are tested.
    """
    Y = dp.Y if Y is None else Y
    scheme = scheme or Scheme(grid, dp, cfg)
    rng = np.random.default_rng(seed)
    p = grid.points
    rep = ComparisonReport()

    def consider(u, v, label):
        rep.candidates += 1
        Fu, Fv = scheme.evaluate(u), scheme.evaluate(v)
        if not np.all(Fu < Fv):
            return
        rep.strict_pairs += 1
        if np.any(u > v):
            k = int(np.argmax(u - v))
            rep.violations.append(dict(pair=label, node=k, gap=float(u[k] - v[k])))

    u0 = initial_iterate(grid)
    R = Y.R_max
    for delta in (0.1, 0.5, 1.0):
        for ang in np.linspace(0, 2 * np.pi, 8, endpoint=False):
            slope = (1 + delta) * R * np.array([np.cos(ang), np.sin(ang)])
            v = p @ slope
            v += (u0 - v).max() + 0.1
            consider(u0, v, f"affine delta={delta} angle={ang:.3f}")
    for k in range(random_pairs):
        A = rng.normal(size=(2, 2))
        v = 0.5 * np.einsum("ij,jk,ik->i", p, A @ A.T + 0.2 * np.eye(2), p)
        c = rng.uniform(0.01, 0.5)
        u = v + c * (np.einsum("ij,ij->i", p, p) - 1.5 * float(np.einsum("ij,ij->i", p, p).max()))
        consider(u, v, f"random {k}")
    if rep.strict_pairs == 0:
        rep.note = "no strict pair found"
    rep.monotonicity_violations = len(monotonicity_probe(scheme, samples=probes, seed=seed))
    return rep


# ---------------------------------------------------------------------------
# One-dimensional counterexample
# ---------------------------------------------------------------------------

@dataclass
class Example1D:
    """The 1D problem ``-u'' + 1 = 0`` on (-1, 1) with one of three uniqueness conditions."""

    which: str
    n: int

    def __post_init__(self):
        if self.which not in ("Ex1", "Ex2", "Ex3"):
            raise ValueError("which must be Ex1, Ex2 or Ex3")
        if self.n < 16:
            raise ValueError("n must be >= 16")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n + 1)

    @property
    def h(self) -> float:
        return 2.0 / self.n

    @property
    def C(self) -> float:
        return -0.5 if self.which == "Ex2" else -1.0 / 6.0

    def mean(self, u) -> float:
        """Trapezoid-rule mean over [-1, 1]."""
        u = np.asarray(u, dtype=float)
        return float(self.h * (u.sum() - 0.5 * (u[0] + u[-1])) / 2.0)

    def evaluate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        h = self.h
        F = np.empty_like(u)
        F[1:-1] = -(u[2:] - 2 * u[1:-1] + u[:-2]) / h ** 2 + 1.0
        # second-order one-sided derivatives at the end points
        du_right = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)
        du_left = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
        if self.which == "Ex1":
            extra = self.mean(u)
        elif self.which == "Ex2":
            extra = u[-1]
        else:
            extra = 0.0
        F[0] = abs(du_left) - 1.0 - extra
        F[-1] = abs(du_right) - 1.0 - extra
        return F


@dataclass
class Demo1DReport:
    which: str
    n: int
    C: float
    interior_residual: float
    boundary_residual: float
    mean_u: float
    v_min_operator: float
    v_mean: float
    max_gap: float
    x: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)

    @property
    def comparison_fails(self) -> bool:
        return self.max_gap > 0

    def summary(self) -> str:
        return (f"example = {self.which}\nn = {self.n}\nC = {self.C:.17g}\n"
                f"interior_residual = {self.interior_residual:.17g}\n"
                f"boundary_residual = {self.boundary_residual:.17g}\nmean_u = {self.mean_u:.17g}\n"
                f"v_min_operator = {self.v_min_operator:.17g}\nv_mean = {self.v_mean:.17g}\n"
                f"max_u_minus_v = {self.max_gap:.17g}\n"
                f"comparison_fails = {str(self.comparison_fails).lower()}\n")

    def dat(self, which: str) -> str:
        vals = self.u if which == "u" else self.v
        return "".join(f"{a:.17g} {b:.17g}\n" for a, b in zip(self.x, vals))


def demo_1d(which: str, n: int = 256) -> Demo1DReport:
    """Solution ``x^2/2 + C`` and supersolution ``-2x`` of the chosen operator, which are not ordered."""
    ex = Example1D(which, n)
    x = ex.x
    u = 0.5 * x ** 2 + ex.C
    v = -2.0 * x
    Fu, Fv = ex.evaluate(u), ex.evaluate(v)
    boundary = max(abs(Fu[0]), abs(Fu[-1]))
    if which == "Ex3":
        # the operator acts on mean-zero functions; the constraint is a residual row
        boundary = max(boundary, abs(ex.mean(u)))
    return Demo1DReport(
        which=which, n=n, C=ex.C,
        interior_residual=float(np.abs(Fu[1:-1]).max()),
        boundary_residual=float(boundary),
        mean_u=ex.mean(u),
        v_min_operator=float(Fv.min()),
        v_mean=ex.mean(v),
        max_gap=float((u - v).max()),
        x=x, u=u, v=v,
    )


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

@dataclass
class StudyTable:
    case: str
    rows: list[dict] = field(default_factory=list)
    complete: bool = True

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def strictly_decreasing(self, key: str) -> bool:
        c = self.column(key)
        return bool(np.all(np.diff(c) < 0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("case,h,e,m,e_ratio,m_ratio,iterations,residual,u_sup\n")
        prev = None
        for r in self.rows:
            er = prev["e"] / r["e"] if prev else math.nan
            mr = prev["m"] / r["m"] if prev else math.nan
            buf.write(f"{self.case},{r['h']:.17g},{r['e']:.17g},{r['m']:.17g},{er:.17g},{mr:.17g},"
                      f"{r['iterations']},{r['residual']:.17g},{r['u_sup']:.17g}\n")
            prev = r
        return buf.getvalue()


def evaluation_lattice(X, margin: float = 0.1, n: int = 50) -> np.ndarray:
    """Cell-centred ``n x n`` lattice at distance more than ``margin`` from the boundary."""
    x0, x1, y0, y1 = X
    xs = x0 + margin + (np.arange(n) + 0.5) * (x1 - x0 - 2 * margin) / n
    ys = y0 + margin + (np.arange(n) + 0.5) * (y1 - y0 - 2 * margin) / n
    P, Q = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([P.ravel(), Q.ravel()])


def potential_error(case: ManufacturedCase, uh: GridFunction, margin: float = 0.1) -> float:
    """``min_c max |U^h - (u* + c)|`` over the interior evaluation lattice."""
    q = evaluation_lattice(case.X, margin)
    d = nn_extension(uh, q) - case.u_exact(q)
    return float(0.5 * (d.max() - d.min()))


def map_error(case: ManufacturedCase, scheme: Scheme, uh: GridFunction, margin: float = 0.1) -> float:
    """Mean of ``|grad^h u^h - T*|`` over interior nodes farther than ``margin`` from the boundary."""
    u = uh.values
    h = scheme.h
    grad = np.column_stack([(u[scheme.plus[k]] - u[scheme.minus[k]]) / (2 * h) for k in (0, 1)])
    x = scheme.grid.points[: scheme.n_int]
    keep = scheme.grid.distance_to_boundary(x) > margin
    err = np.hypot(*(grad - case.T_exact(x)).T)
    return float(err[keep].mean())


def convergence_study(case: ManufacturedCase, h_list=(1 / 8, 1 / 16, 1 / 32), cfg: SchemeConfig | None = None,
                      tol: float = 1e-8, max_iter: int = 1_000_000, margin: float = 0.1,
                      solutions: dict | None = None) -> StudyTable:
    """Solve at each ``h`` and tabulate the interior potential and map errors."""
    h_list = list(h_list)
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ValueError("h list must be decreasing")
    table = StudyTable(case.name)
    for h in h_list:
        grid = build_grid(case.X, h)
        scheme = Scheme(grid, case.densities, cfg)
        try:
            uh, rep = solve(scheme, grid, tol=tol, max_iter=max_iter)
        except Exception:
            table.complete = False
            raise
        if solutions is not None:
            solutions[h] = (grid, scheme, uh, rep)
        table.rows.append(dict(
            h=h, e=potential_error(case, uh, margin), m=map_error(case, scheme, uh, margin),
            iterations=rep.iterations, residual=rep.residual,
            u_sup=float(np.abs(uh.values).max()), wall_time=rep.wall_time,
        ))
    return table


# ---------------------------------------------------------------------------
# Independent geometry oracles
# ---------------------------------------------------------------------------

def envelope_lp_oracle(points: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Convex envelope at each node by linear programming.

    ``env(x_i) = max { a + p . x_i : a + p . x_j <= u_j for all j }``.
    """
    n = len(points)
    A_ub = np.column_stack([np.ones(n), points])
    out = np.empty(n)
    for i in range(n):
        c = -np.array([1.0, points[i, 0], points[i, 1]])
        res = linprog(c, A_ub=A_ub, b_ub=values, bounds=[(None, None)] * 3, method="highs")
        if res.status != 0:
            raise RuntimeError(f"linear programme failed at node {i}: {res.message}")
        out[i] = -res.fun
    return out


def polytope_area_sampling(points: np.ndarray, values: np.ndarray, node: int, box: tuple,
                           samples: int = 100_000, rng: np.random.Generator | None = None) -> float:
    """Monte-Carlo area of ``{p : u_j >= u_i + p . (x_j - x_i) for all j}`` within ``box``."""
    rng = rng or np.random.default_rng(0)
    xmin, xmax, ymin, ymax = box
    P = np.column_stack([rng.uniform(xmin, xmax, samples), rng.uniform(ymin, ymax, samples)])
    d = points - points[node]
    rhs = values - values[node]
    inside = np.ones(samples, dtype=bool)
    for s in range(0, len(d), 64):
        inside &= (P @ d[s:s + 64].T <= rhs[s:s + 64] + 1e-12).all(axis=1)
    return float(inside.mean() * (xmax - xmin) * (ymax - ymin))
