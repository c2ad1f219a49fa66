"""
Monotone wide-stencil discretisation of the combined operator

    max{ -g(grad u) det D^2 u + f,  -lambda_1(D^2 u),  H(grad u) } = 0

on a :class:`~motsolve.grid.Grid`, with homogeneous Dirichlet rows on the
boundary.  The three pieces are

* ``F1``: lattice-basis-reduction Monge-Ampere operator with a
  Lax-Friedrichs bound on the target density and a lowered source density;
* ``F2``: minimum over a fan of directions of a non-negative four-point
  second directional derivative;
* ``F3``: a Lax-Friedrichs approximation of ``H(grad u)`` sampled over
  weighted one-sided gradients.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import sparse

from .geometry import ConvexTarget, _box_distance, compute_M, signed_distance
from .grid import Grid
from .problem import DensityPair

__all__ = [
    "Superbase", "DirectionStencil", "SchemeConfig", "Scheme",
    "enumerate_superbases", "lbr_G", "direction_set", "second_difference",
    "build_direction_stencil", "weighted_gradient", "compute_M",
]


@dataclass(frozen=True)
class Superbase:
    e: tuple[int, int]
    e1: tuple[int, int]
    e2: tuple[int, int]

    def __post_init__(self):
        det = self.e[0] * self.e1[1] - self.e[1] * self.e1[0]
        s = (self.e[0] + self.e1[0] + self.e2[0], self.e[1] + self.e1[1] + self.e2[1])
        if abs(det) != 1 or s != (0, 0):
            raise ValueError(f"not a superbase: {self}")

    @property
    def vectors(self) -> tuple[tuple[int, int], ...]:
        return self.e, self.e1, self.e2


@dataclass(frozen=True)
class SchemeConfig:
    N: int = 5
    alpha: float = 0.5
    # scale g_h det_h by h^2 / A_x on cells smaller than h^2 (next to the boundary)
    cell_correction: bool = True

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("N must be an integer >= 2")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha out of range (0,1]")


def _sign_normal(v):
    return v if (v[0] > 0 or (v[0] == 0 and v[1] > 0)) else (-v[0], -v[1])


def enumerate_superbases(N: int) -> list[Superbase]:
    """Superbases of Z^2 with every sup-norm below sqrt(N), up to order and sign."""
    if N < 2:
        raise ValueError("N must be >= 2")
    bound = math.sqrt(N)
    r = int(math.floor(bound))
    vecs = [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)
            if (a, b) != (0, 0) and max(abs(a), abs(b)) < bound]
    seen = {}
    for e in vecs:
        for f in vecs:
            if e[0] * f[1] - e[1] * f[0] != 1:
                continue
            g = (-e[0] - f[0], -e[1] - f[1])
            if max(abs(g[0]), abs(g[1])) >= bound:
                continue
            key = tuple(sorted(_sign_normal(v) for v in (e, f, g)))
            if key not in seen:
                seen[key] = Superbase(e, f, g)
    # canonical (e1, e2, -e1-e2) first
    return [seen[k] for k in sorted(seen, key=lambda k: (sum(max(map(abs, v)) for v in k), k))]


def lbr_G(a, b, c):
    """Hexagon-area function of three clamped second differences (vectorised)."""
    a, b, c = np.broadcast_arrays(*(np.asarray(t, dtype=float) for t in (a, b, c)))
    general = 0.5 * (a * b + b * c + c * a) - 0.25 * (a * a + b * b + c * c)
    out = np.where(c >= a + b, a * b, general)
    out = np.where(b >= c + a, c * a, out)
    out = np.where(a >= b + c, b * c, out)
    return out[()] if out.ndim == 0 else out


def direction_set(h: float) -> np.ndarray:
    """Unit vectors at angles ``j * dtheta``, ``j = 0..N_theta``, with ``(N_theta + 1) dtheta = pi``."""
    if not h > 0:
        raise ValueError("h must be positive")
    n = int(math.ceil(math.pi / math.sqrt(h) - 1e-12))
    theta = np.arange(n) * (math.pi / n)
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _lattice_neighbour(grid: Grid, node: int, e) -> int:
    y = grid.shift(node, e)
    if y < 0:
        raise ValueError("stencil out of domain")
    return y


def second_difference(grid: Grid, u, node: int, e) -> float:
    """``(u(x + h e) + u(x - h e) - 2 u(x)) / h^2``."""
    u = np.asarray(u, dtype=float)
    p, m = _lattice_neighbour(grid, node, e), _lattice_neighbour(grid, node, (-e[0], -e[1]))
    return float((u[p] + u[m] - 2 * u[node]) / grid.h ** 2)


def weighted_gradient(grid: Grid, u, node: int, i: int, j: int, M: int) -> np.ndarray:
    """Convex combination ``(1 - i/M) D^- + (i/M) D^+`` per axis."""
    u = np.asarray(u, dtype=float)
    h = grid.h
    out = np.empty(2)
    for axis, w in enumerate((i / M, j / M)):
        e = (1, 0) if axis == 0 else (0, 1)
        fwd = (u[_lattice_neighbour(grid, node, e)] - u[node]) / h
        bwd = (u[node] - u[_lattice_neighbour(grid, node, (-e[0], -e[1]))]) / h
        out[axis] = (1 - w) * bwd + w * fwd
    return out


# ---------------------------------------------------------------------------
# Four-point directional second derivatives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionStencil:
    nu: np.ndarray
    nodes: np.ndarray      # neighbour node indices (up to 4, distinct)
    offsets: np.ndarray    # x_j - x_0
    coeffs: np.ndarray     # a_j >= 0
    perp_residual: float   # 1/2 sum a_j ((x_j - x_0) . nu_perp)^2

    def apply(self, u, center: float | None = None) -> float:
        u = np.asarray(u, dtype=float)
        c = u[self.origin] if center is None else center
        return float(np.dot(self.coeffs, u[self.nodes] - c))

    origin: int = -1


def _select_quadrants(offsets: np.ndarray, nu: np.ndarray):
    """Per closed quadrant of the (nu, nu_perp) frame, the offset best aligned with +-nu."""
    perp = np.array([-nu[1], nu[0]])
    t = offsets @ nu
    s = offsets @ perp
    r = np.hypot(offsets[:, 0], offsets[:, 1])
    tol = 1e-12 * r
    align = np.abs(t) / r
    picks = []
    for st, ss in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        mask = (st * t >= -tol) & (ss * s >= -tol)
        if not mask.any():
            return None
        idx = np.flatnonzero(mask)
        # most aligned, then nearest, then lowest index
        order = np.lexsort((idx, r[idx], -np.round(align[idx], 12)))
        picks.append(int(idx[order[0]]))
    return picks


def _coefficients(offsets: np.ndarray, nu: np.ndarray):
    """Non-negative weights with exact first moments and unit nu-moment, minimising the nu_perp moment.

    Linear programme in at most four unknowns, solved by enumerating basic
    solutions.  Returns ``(coeffs, perp_moment)`` or None when infeasible.
    """
    perp = np.array([-nu[1], nu[0]])
    t = offsets @ nu
    s = offsets @ perp
    A = np.vstack([t, s, 0.5 * t * t])
    b = np.array([0.0, 0.0, 1.0])
    cost = 0.5 * s * s
    m = len(t)
    best = None
    for size in (1, 2, 3):
        for cols in combinations(range(m), size):
            As = A[:, cols]
            if np.linalg.matrix_rank(As, tol=1e-10) < size:
                continue
            sol, *_ = np.linalg.lstsq(As, b, rcond=None)
            if np.abs(As @ sol - b).max() > 1e-9 or sol.min() < -1e-12:
                continue
            sol = np.maximum(sol, 0.0)
            val = float(cost[list(cols)] @ sol)
            if best is None or val < best[1] - 1e-14:
                a = np.zeros(m)
                a[list(cols)] = sol
                best = (a, val)
    return best


def _stencil_from_offsets(offsets: np.ndarray, nu: np.ndarray, scale: float):
    """Stencil in offset units of ``scale``; returns picked rows and physical coefficients."""
    picks = _select_quadrants(offsets, nu)
    if picks is None:
        return None
    uniq = sorted(set(picks))
    sol = _coefficients(offsets[uniq], nu)
    if sol is None:
        return None
    a, perp = sol
    return np.array(uniq), a / scale ** 2, perp


def _candidate_offsets(grid: Grid, node: int):
    r = math.sqrt(grid.h)
    p = grid.points[node]
    near = np.array(sorted(grid.tree.query_ball_point(p, r)), dtype=int)
    d = grid.points[near] - p
    dist = np.hypot(d[:, 0], d[:, 1])
    keep = (dist > 0) & (dist < r * (1 - 1e-9))
    return near[keep], d[keep]


def build_direction_stencil(grid: Grid, node: int, nu, h: float | None = None) -> DirectionStencil:
    """Four-point non-negative stencil for the second derivative along ``nu`` at ``node``."""
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.hypot(*nu)
    nodes, d = _candidate_offsets(grid, node)
    if len(nodes) == 0:
        raise ValueError("stencil starved")
    scale = grid.h
    res = _stencil_from_offsets(d / scale, nu, scale)
    if res is None:
        raise ValueError("stencil starved")
    rows, coeffs, perp = res
    return DirectionStencil(nu, nodes[rows], d[rows], coeffs, perp, origin=node)


# ---------------------------------------------------------------------------
# The combined scheme
# ---------------------------------------------------------------------------

class Scheme:
    """Vectorised combined scheme on a fixed grid.

    All stencil tables are built once; evaluation methods take a grid
    function ``u`` (one value per node) and an optional ``center`` array
    that replaces ``u(x)`` in the row of node ``x`` only, which gives the
    dependence of each row on its own value with the neighbours frozen.
    """

    def __init__(self, grid: Grid, dp: DensityPair, cfg: SchemeConfig | None = None):
        self.grid = grid
        self.dp = dp
        self.Y: ConvexTarget = dp.Y
        self.cfg = cfg or SchemeConfig()
        self.h = grid.h
        self.M = compute_M(self.Y)
        self.L_H = self.Y.L_H
        self.shift_h_alpha = self.h ** self.cfg.alpha
        self.interior = grid.interior
        if not np.array_equal(self.interior, np.arange(len(self.interior))):
            raise ValueError("interior nodes must precede boundary nodes")
        self.n_int = len(self.interior)
        self._build_lattice_tables()
        self._build_direction_tables()
        x = grid.points[self.interior]
        self.f_h = np.maximum(dp.f_values(x) - self.h * dp.L_f_scaled / math.sqrt(2.0), 0.0)
        self.cell_factor = np.ones(self.n_int)
        if self.cfg.cell_correction:
            A = grid.areas[: self.n_int]
            small = A < self.h ** 2
            self.cell_factor[small] = self.h ** 2 / A[small]

    # -- tables -------------------------------------------------------------
    def _build_lattice_tables(self):
        grid, idx = self.grid, self.interior
        self.superbases = enumerate_superbases(self.cfg.N)
        vecs = {(1, 0): None, (0, 1): None}
        for sb in self.superbases:
            for v in sb.vectors:
                vecs[_sign_normal(v)] = None
        self.vectors = list(vecs)
        self._vid = {v: k for k, v in enumerate(self.vectors)}
        self.plus = np.stack([grid.shift_all(idx, v) for v in self.vectors])
        self.minus = np.stack([grid.shift_all(idx, (-v[0], -v[1])) for v in self.vectors])
        fits_v = (self.plus >= 0) & (self.minus >= 0)
        if not (fits_v[0].all() and fits_v[1].all()):
            raise ValueError("stencil out of domain")
        self.sb_ids = np.array([[self._vid[_sign_normal(v)] for v in sb.vectors] for sb in self.superbases])
        self.sb_fits = fits_v[self.sb_ids].all(axis=1)          # (n_sb, n_int)
        if not self.sb_fits.any(axis=0).all():
            raise ValueError("empty admissible superbase set")
        # missing neighbours point at node 0; masked out by sb_fits
        self.plus_safe = np.where(self.plus >= 0, self.plus, 0)
        self.minus_safe = np.where(self.minus >= 0, self.minus, 0)

    def _build_direction_tables(self):
        grid = self.grid
        self.directions = direction_set(self.h)
        nd = len(self.directions)
        idx = np.zeros((self.n_int, nd, 4), dtype=int)
        coef = np.zeros((self.n_int, nd, 4))
        valid = np.zeros((self.n_int, nd), dtype=bool)
        perp = np.zeros((self.n_int, nd))
        unit = grid.h / grid.k
        cache: dict = {}
        self.starved: list[tuple[int, int]] = []
        for node in range(self.n_int):
            nodes, d = _candidate_offsets(grid, node)
            key = tuple(map(tuple, np.rint(d / unit).astype(int)))
            entry = cache.get(key)
            if entry is None:
                entry = []
                for nu in self.directions:
                    entry.append(_stencil_from_offsets(d / grid.h, nu, grid.h))
                cache[key] = entry
            for j, res in enumerate(entry):
                if res is None:
                    self.starved.append((node, j))
                    continue
                rows, a, pr = res
                m = len(rows)
                idx[node, j, :m] = nodes[rows]
                coef[node, j, :m] = a
                valid[node, j] = True
                perp[node, j] = pr
        if not valid.any(axis=1).all():
            raise ValueError("all directions starved at some node")
        self.dir_idx, self.dir_coef, self.dir_valid, self.dir_perp = idx, coef, valid, perp
        rows = np.repeat(np.arange(self.n_int * nd), 4)
        self._dir_matrix = sparse.csr_matrix((coef.ravel(), (rows, idx.ravel())), shape=(self.n_int * nd, grid.n))
        self._dir_sum = coef.sum(axis=2)
        self._stencil_cache_size = len(cache)

    # -- building blocks ----------------------------------------------------
    def _center(self, u, center):
        return u[: self.n_int] if center is None else np.asarray(center, dtype=float)[: self.n_int]

    def second_differences(self, u, center=None) -> np.ndarray:
        """``Delta_ee u`` for every stencil vector, shape (n_vectors, n_int)."""
        u = np.asarray(u, dtype=float)
        c = self._center(u, center)
        return (u[self.plus_safe] + u[self.minus_safe] - 2 * c) / self.h ** 2

    def det_h(self, u, center=None, d2=None) -> np.ndarray:
        d2 = self.second_differences(u, center) if d2 is None else d2
        d2 = np.maximum(d2, 0.0)
        abc = d2[self.sb_ids]                      # (n_sb, 3, n_int)
        G = lbr_G(abc[:, 0], abc[:, 1], abc[:, 2])
        return np.where(self.sb_fits, G, np.inf).min(axis=0)

    def laplacian(self, u, center=None, d2=None) -> np.ndarray:
        d2 = self.second_differences(u, center) if d2 is None else d2
        return d2[0] + d2[1]

    def g_h(self, u, center=None, d2=None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        lap = self.laplacian(u, center, d2)
        h = self.h
        grad0 = np.column_stack([(u[self.plus[0]] - u[self.minus[0]]) / (2 * h),
                                 (u[self.plus[1]] - u[self.minus[1]]) / (2 * h)])
        return np.maximum(self.dp.g(grad0) + h * self.dp.L_g * lap, 0.0)

    def F1(self, u, center=None, d2=None) -> np.ndarray:
        d2 = self.second_differences(u, center) if d2 is None else d2
        return -self.cell_factor * self.g_h(u, center, d2) * self.det_h(u, center, d2) + self.f_h

    def directional_second(self, u, center=None) -> np.ndarray:
        """Stencil values for every direction, shape (n_int, n_dirs); invalid ones are +inf."""
        u = np.asarray(u, dtype=float)
        c = self._center(u, center)
        vals = (self._dir_matrix @ u).reshape(self.n_int, -1) - self._dir_sum * c[:, None]
        return np.where(self.dir_valid, vals, np.inf)

    def F2(self, u, center=None) -> np.ndarray:
        return -self.directional_second(u, center).min(axis=1)

    def one_sided(self, u, center=None):
        u = np.asarray(u, dtype=float)
        c = self._center(u, center)
        h = self.h
        fwd = np.stack([(u[self.plus[a]] - c) / h for a in (0, 1)])
        bwd = np.stack([(c - u[self.minus[a]]) / h for a in (0, 1)])
        return bwd, fwd

    def F3(self, u, center=None, d2=None) -> np.ndarray:
        bwd, fwd = self.one_sided(u, center)
        w = np.arange(self.M + 1) / self.M
        gx = (1 - w)[None, :] * bwd[0][:, None] + w[None, :] * fwd[0][:, None]   # (n_int, M+1)
        gy = (1 - w)[None, :] * bwd[1][:, None] + w[None, :] * fwd[1][:, None]
        return self._H_grid_min(gx, gy) - self.h * self.L_H * self.laplacian(u, center, d2)

    def _H_grid_min(self, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
        """Per row, ``min_ij H(gx_i, gy_j)``."""
        Y = self.Y
        if Y.is_disc:
            cx, cy = Y.center
            d = np.hypot(gx[:, :, None] - cx, gy[:, None, :] - cy)
            return d.reshape(len(gx), -1).min(axis=1) - Y.radius
        if Y.box is not None:
            cx, cy, hx, hy = Y.box
            # non-decreasing in each axis excess, so the grid minimum is at the axis minima
            return _box_distance((np.abs(gx - cx) - hx).min(axis=1), (np.abs(gy - cy) - hy).min(axis=1))
        normals, offsets = Y.facets
        # facet maximum is exact inside the polygon, a lower bound outside
        V = normals[0, 0] * gx[:, :, None] + (normals[0, 1] * gy - offsets[0])[:, None, :]
        for k in range(1, len(offsets)):
            np.maximum(V, normals[k, 0] * gx[:, :, None] + (normals[k, 1] * gy - offsets[k])[:, None, :], out=V)
        V = V.reshape(len(gx), -1)
        out = V.min(axis=1)
        outside = np.flatnonzero(out > 0)
        if len(outside):
            pts = np.stack(np.broadcast_arrays(gx[outside, :, None], gy[outside, None, :]), axis=-1)
            out[outside] = signed_distance(Y, pts.reshape(-1, 2)).reshape(len(outside), -1).min(axis=1)
        return out

    # -- combined -----------------------------------------------------------
    def components(self, u, center=None):
        u = np.asarray(u, dtype=float)
        d2 = self.second_differences(u, center)
        return self.F1(u, center, d2), self.F2(u, center), self.F3(u, center, d2)

    def evaluate(self, u, center=None) -> np.ndarray:
        """Combined scheme value at every node (interior rows then Dirichlet rows)."""
        u = np.asarray(u, dtype=float)
        c = u if center is None else np.asarray(center, dtype=float)
        out = c.copy()
        F1, F2, F3 = self.components(u, center)
        out[: self.n_int] = np.maximum(np.maximum(F1, F2), F3) - self.shift_h_alpha
        return out

    def residual(self, u) -> float:
        return float(np.abs(self.evaluate(u)).max())

    def sensitivity(self, u, delta: float = 1e-6, base=None) -> np.ndarray:
        """Probed derivative of each row with respect to its own node value."""
        u = np.asarray(u, dtype=float)
        base = self.evaluate(u) if base is None else base
        return (self.evaluate(u, u + delta) - base) / delta

    def breakdown_csv(self, u) -> str:
        F1, F2, F3 = self.components(u)
        comb = self.evaluate(u)
        arg = np.argmax(np.stack([F1, F2, F3]), axis=0) + 1
        buf = io.StringIO()
        buf.write("node,F1,F2,F3,argmax,combined\n")
        for k in range(self.n_int):
            buf.write(f"{k},{F1[k]:.17g},{F2[k]:.17g},{F3[k]:.17g},F{arg[k]},{comb[k]:.17g}\n")
        return buf.getvalue()

    # -- single node evaluators ----------------------------------------------
    def node_function(self, u, node: int):
        """Scalar map ``t -> F(x, t, t - u(.))`` for one node with neighbours frozen."""
        u = np.asarray(u, dtype=float)
        if node >= self.n_int:
            return lambda t: float(t)
        h, h2 = self.h, self.h ** 2
        s = u[self.plus_safe[:, node]] + u[self.minus_safe[:, node]]
        fits = self.sb_fits[:, node]
        sb_ids = self.sb_ids[fits]
        nbr_p = u[self.plus[:2, node]]
        nbr_m = u[self.minus[:2, node]]
        grad0 = (nbr_p - nbr_m) / (2 * h)
        g0 = float(self.dp.g(grad0[None, :])[0])
        L_g, L_H = self.dp.L_g, self.L_H
        valid = self.dir_valid[node]
        dcoef = self.dir_coef[node][valid]
        dsum = (dcoef * u[self.dir_idx[node][valid]]).sum(axis=1)
        asum = dcoef.sum(axis=1)
        w = np.arange(self.M + 1) / self.M
        f_h = self.f_h[node]
        cf = self.cell_factor[node]
        shift = self.shift_h_alpha
        Hmin = self._H_grid_min

        def F(t: float) -> float:
            d2 = (s - 2 * t) / h2
            lap = d2[0] + d2[1]
            c = np.maximum(d2, 0.0)[sb_ids]
            det = float(lbr_G(c[:, 0], c[:, 1], c[:, 2]).min())
            gh = max(g0 + h * L_g * lap, 0.0)
            f1 = -cf * gh * det + f_h
            f2 = -float((dsum - asum * t).min())
            fwd = (nbr_p - t) / h
            bwd = (t - nbr_m) / h
            gx = (1 - w) * bwd[0] + w * fwd[0]
            gy = (1 - w) * bwd[1] + w * fwd[1]
            f3 = float(Hmin(gx[None, :], gy[None, :])[0]) - h * L_H * lap
            return max(f1, f2, f3) - shift

        return F
