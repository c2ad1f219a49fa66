"""
Planar convex geometry used by the scheme and its verification oracles.

Target sets, their signed-distance defining functions, convex polygon
clipping, subgradient polytopes of piecewise-linear convex grid functions
and lower convex envelopes of grid data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

_EPS = 1e-12


# ---------------------------------------------------------------------------
# Polygons
# ---------------------------------------------------------------------------

def polygon_area(vertices) -> float:
    """Shoelace area of a polygon given counterclockwise vertices."""
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def box_polygon(xmin, xmax, ymin, ymax) -> np.ndarray:
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], dtype=float)


def clip_halfplane(vertices: np.ndarray, a, b: float) -> np.ndarray:
    """Clip a convex polygon to the half-plane ``a . p <= b``.

    One Sutherland-Hodgman pass; the result may be empty, a segment or a
    point when the half-plane only grazes the polygon.
    """
    v = vertices
    n = len(v)
    if n == 0:
        return v
    a = np.asarray(a, dtype=float)
    s = v @ a - b
    scale = _EPS * max(1.0, abs(b), float(np.abs(v).max()) * float(np.abs(a).sum()))
    inside = s <= scale
    if inside.all():
        return v
    if not inside.any():
        return v[:0]
    out = []
    for k in range(n):
        j = (k + 1) % n
        if inside[k]:
            out.append(v[k])
        if inside[k] != inside[j]:
            t = s[k] / (s[k] - s[j])
            out.append(v[k] + t * (v[j] - v[k]))
    return _dedupe(np.array(out))


def _dedupe(v: np.ndarray) -> np.ndarray:
    if len(v) <= 1:
        return v
    keep = [0]
    tol = 1e-14 * max(1.0, float(np.abs(v).max()))
    for k in range(1, len(v)):
        if np.abs(v[k] - v[keep[-1]]).max() > tol:
            keep.append(k)
    if len(keep) > 1 and np.abs(v[keep[-1]] - v[keep[0]]).max() <= tol:
        keep.pop()
    return v[keep]


def intersect_convex(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Intersection of convex polygon ``p`` with convex polygon ``q`` (ccw)."""
    out = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for k in range(len(q)):
        a, b = q[k], q[(k + 1) % len(q)]
        d = b - a
        normal = np.array([d[1], -d[0]])
        out = clip_halfplane(out, normal, float(normal @ a))
        if len(out) == 0:
            break
    return out


def is_strictly_convex(vertices) -> bool:
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    if n < 3:
        return False
    for k in range(n):
        a, b, c = v[k], v[(k + 1) % n], v[(k + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= _EPS * max(1.0, float(np.abs(v).max()) ** 2):
            return False
    return True


def polygon_to_csv(vertices) -> str:
    return "".join(f"{x:.17g},{y:.17g}\n" for x, y in np.asarray(vertices, float).reshape(-1, 2))


def polygon_from_csv(text: str) -> np.ndarray:
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    return np.array([[float(a), float(b)] for a, b in rows], dtype=float).reshape(-1, 2)


# ---------------------------------------------------------------------------
# Target sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvexTarget:
    """Convex target set Y: a strictly convex polygon or a disc.

    The defining function is the signed Euclidean distance to the boundary,
    so its Lipschitz constant ``L_H`` is 1.
    """

    vertices: np.ndarray | None = None
    center: tuple[float, float] | None = None
    radius: float | None = None
    L_H: float = field(default=1.0)

    def __post_init__(self):
        if self.vertices is not None:
            v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
            if polygon_area(v) < 0:
                v = v[::-1].copy()
            if not is_strictly_convex(v):
                raise ValueError("polygon vertices are not in strictly convex position")
            v.setflags(write=False)
            object.__setattr__(self, "vertices", v)
        elif self.radius is not None:
            if not self.radius > 0:
                raise ValueError("disc radius must be positive")
            c = (0.0, 0.0) if self.center is None else tuple(map(float, self.center))
            object.__setattr__(self, "center", c)
        else:
            raise ValueError("a target needs either vertices or a radius")

    @classmethod
    def polygon(cls, vertices) -> "ConvexTarget":
        return cls(vertices=np.asarray(vertices, dtype=float))

    @classmethod
    def rectangle(cls, xmin, xmax, ymin, ymax) -> "ConvexTarget":
        return cls(vertices=box_polygon(xmin, xmax, ymin, ymax))

    @classmethod
    def disc(cls, center, radius) -> "ConvexTarget":
        return cls(center=tuple(center), radius=float(radius))

    @property
    def is_disc(self) -> bool:
        return self.vertices is None

    def H(self, p) -> np.ndarray | float:
        return signed_distance(self, p)

    @cached_property
    def R_max(self) -> float:
        """max |y| over the boundary of Y."""
        if self.is_disc:
            return math.hypot(*self.center) + self.radius
        return float(np.max(np.hypot(self.vertices[:, 0], self.vertices[:, 1])))

    @cached_property
    def facets(self) -> tuple[np.ndarray, np.ndarray]:
        """Outward unit normals and offsets, ``Y = {n_k . y <= b_k}``."""
        v = self.vertices
        d = np.roll(v, -1, axis=0) - v
        normals = np.column_stack([d[:, 1], -d[:, 0]])
        normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
        return normals, np.einsum("ij,ij->i", normals, v)

    @cached_property
    def box(self) -> tuple[float, float, float, float] | None:
        """``(cx, cy, half_x, half_y)`` for an axis-aligned rectangle, else None."""
        if self.is_disc or len(self.vertices) != 4:
            return None
        normals, _ = self.facets
        if not np.all(np.abs(normals).max(axis=1) == 1.0):
            return None
        x0, x1, y0, y1 = self.bounding_box()
        return (x0 + x1) / 2, (y0 + y1) / 2, (x1 - x0) / 2, (y1 - y0) / 2

    @cached_property
    def inradius(self) -> float:
        if self.is_disc:
            return self.radius
        normals, offsets = self.facets
        n = len(normals)
        # Chebyshev centre: max r s.t. n_k . c + r <= b_k
        res = linprog(
            c=[0.0, 0.0, -1.0],
            A_ub=np.column_stack([normals, np.ones(n)]),
            b_ub=offsets,
            bounds=[(None, None), (None, None), (0, None)],
            method="highs",
        )
        return float(res.x[2]) if res.status == 0 else 0.0

    @cached_property
    def D(self) -> float:
        return inner_diameter(self)

    @cached_property
    def M(self) -> int:
        return compute_M(self)

    def as_polygon(self, n: int = 256) -> np.ndarray:
        if not self.is_disc:
            return np.asarray(self.vertices)
        t = 2 * np.pi * np.arange(n) / n
        return np.column_stack([self.center[0] + self.radius * np.cos(t),
                                self.center[1] + self.radius * np.sin(t)])

    def bounding_box(self) -> tuple[float, float, float, float]:
        if self.is_disc:
            cx, cy = self.center
            r = self.radius
            return cx - r, cx + r, cy - r, cy + r
        v = self.vertices
        return float(v[:, 0].min()), float(v[:, 0].max()), float(v[:, 1].min()), float(v[:, 1].max())

    def contains(self, p, tol: float = 0.0) -> np.ndarray:
        """Membership in the closure of Y, up to ``tol``."""
        return np.asarray(signed_distance(self, p)) <= tol


def signed_distance(Y: ConvexTarget, p):
    """Signed Euclidean distance from ``p`` to the boundary of ``Y``.

    Negative inside, zero on the boundary, positive outside.  ``p`` may be a
    single point or an array of points with trailing dimension 2.
    """
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 1
    q = p.reshape(-1, 2)
    if Y.is_disc:
        out = np.hypot(q[:, 0] - Y.center[0], q[:, 1] - Y.center[1]) - Y.radius
    elif Y.box is not None:
        cx, cy, hx, hy = Y.box
        out = _box_distance(np.abs(q[:, 0] - cx) - hx, np.abs(q[:, 1] - cy) - hy)
    else:
        normals, offsets = Y.facets
        # exact inside a convex polygon; outside only near-vertex points differ
        out = q[:, 0] * normals[0, 0] + q[:, 1] * normals[0, 1] - offsets[0]
        for k in range(1, len(offsets)):
            np.maximum(out, q[:, 0] * normals[k, 0] + q[:, 1] * normals[k, 1] - offsets[k], out=out)
        outside = out > 0
        if outside.any():
            out[outside] = _outside_distance(Y.vertices, q[outside])
    out = out.reshape(p.shape[:-1])
    return float(out) if scalar else out


def _box_distance(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Signed distance to a centred box from the per-axis excesses ``|q| - half``."""
    return np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0)) + np.minimum(np.maximum(dx, dy), 0.0)


def _outside_distance(v: np.ndarray, q: np.ndarray) -> np.ndarray:
    best = np.full(len(q), np.inf)
    qx, qy = q[:, 0], q[:, 1]
    for k in range(len(v)):
        ax, ay = v[k]
        dx, dy = v[(k + 1) % len(v)] - v[k]
        wx, wy = qx - ax, qy - ay
        t = np.clip((wx * dx + wy * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        np.minimum(best, np.hypot(wx - t * dx, wy - t * dy), out=best)
    return best


def inner_diameter(Y: ConvexTarget) -> float:
    """Inner-diameter surrogate ``D = sqrt(2) * inradius(Y)``."""
    r = Y.inradius
    if not r > _EPS:
        raise ValueError("target has empty interior")
    return math.sqrt(2.0) * r


def compute_M(Y: ConvexTarget) -> int:
    """Number of gradient samples per axis, ``ceil(2 R_max / D)``."""
    return max(1, int(math.ceil(2.0 * Y.R_max / Y.D - 1e-12)))


# ---------------------------------------------------------------------------
# Subgradients of piecewise-linear convex functions
# ---------------------------------------------------------------------------

@dataclass
class SubgradientPolytope:
    vertices: np.ndarray

    @property
    def area(self) -> float:
        return max(polygon_area(self.vertices), 0.0) if len(self.vertices) >= 3 else 0.0

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    def to_csv(self) -> str:
        return polygon_to_csv(self.vertices)


def _points_of(grid) -> np.ndarray:
    return np.asarray(getattr(grid, "points", grid), dtype=float)


class _LowerHull:
    """Lower convex hull of the lifted points ``(x, y, value)``."""

    def __init__(self, points: np.ndarray, values: np.ndarray):
        n = len(points)
        if n < 3 or np.linalg.matrix_rank(points - points[0], tol=1e-12) < 2:
            raise ValueError("convex envelope needs at least 3 affinely independent nodes")
        span = float(np.ptp(points, axis=0).max())
        vrange = float(np.ptp(values)) if n else 0.0
        # an apex far above the data keeps the hull full-dimensional for planar data
        apex = np.array([[*points.mean(axis=0), values.max() + vrange + span + 1.0]])
        lifted = np.vstack([np.column_stack([points, values]), apex])
        hull = ConvexHull(lifted)
        eq = hull.equations
        lower = eq[:, 2] < -1e-12
        self.simplices = hull.simplices[lower]
        eq = eq[lower]
        self.grad = -eq[:, :2] / eq[:, 2:3]
        self.offset = -eq[:, 3] / eq[:, 2]
        self.n = n

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        out = np.empty(len(z))
        for start in range(0, len(z), 512):
            zz = z[start:start + 512]
            out[start:start + 512] = (zz @ self.grad.T + self.offset).max(axis=1)
        return out

    def neighbours(self, points: np.ndarray) -> list[np.ndarray]:
        """Nodes sharing a lower facet with each node (facet-footprint lookup for non-vertices)."""
        nbrs: list[set] = [set() for _ in range(self.n)]
        for tri in self.simplices:
            for a in tri:
                nbrs[a].update(int(b) for b in tri)
        missing = [k for k in range(self.n) if not nbrs[k]]
        if missing:
            tris = points[self.simplices]
            for k in missing:
                nbrs[k].update(self._containing(tris, points[k]))
        return [np.array(sorted(s - {k}), dtype=int) for k, s in enumerate(nbrs)]

    def _containing(self, tris: np.ndarray, z: np.ndarray) -> set:
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        ok = np.abs(det) > 1e-300
        l1 = ((b[:, 0] - z[0]) * (c[:, 1] - z[1]) - (b[:, 1] - z[1]) * (c[:, 0] - z[0])) / np.where(ok, det, 1)
        l2 = ((c[:, 0] - z[0]) * (a[:, 1] - z[1]) - (c[:, 1] - z[1]) * (a[:, 0] - z[0])) / np.where(ok, det, 1)
        l3 = 1 - l1 - l2
        hit = ok & (l1 >= -1e-10) & (l2 >= -1e-10) & (l3 >= -1e-10)
        return {int(i) for i in self.simplices[hit].ravel() if i < self.n}


@dataclass
class PWLConvexFunction:
    """Node values of a convex piecewise-linear surface over a grid.

    Build with :func:`convex_envelope_pwl` or :meth:`certify`; the plain
    constructor trusts ``certified``.
    """

    grid: object
    values: np.ndarray
    certified: bool = False
    _hull: _LowerHull | None = field(default=None, repr=False)
    _nbrs: list | None = field(default=None, repr=False)

    @property
    def points(self) -> np.ndarray:
        return _points_of(self.grid)

    @classmethod
    def certify(cls, grid, values, tol: float = 1e-10) -> "PWLConvexFunction":
        values = np.asarray(values, dtype=float)
        env = convex_envelope_pwl(grid, values)
        scale = max(1.0, float(np.abs(values).max()))
        ok = bool(np.abs(env.values - values).max() <= tol * scale)
        return cls(grid, values, certified=ok, _hull=env._hull)

    def neighbours(self) -> list[np.ndarray]:
        if self._nbrs is None:
            if self._hull is None:
                self._hull = _LowerHull(self.points, self.values)
            self._nbrs = self._hull.neighbours(self.points)
        return self._nbrs

    def default_bound(self) -> float:
        if self._hull is None:
            self._hull = _LowerHull(self.points, self.values)
        return 4.0 * (float(np.abs(self._hull.grad).max()) + 1.0)


def convex_envelope_pwl(grid, values) -> PWLConvexFunction:
    """Largest convex function lying at or below ``values`` at every node.

    Computed from the lower convex hull of the lifted point set; the result
    equals the data on hull-supporting nodes and lies below it elsewhere.
    """
    pts = _points_of(grid)
    vals = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("values must be finite")
    hull = _LowerHull(pts, vals)
    env = np.minimum(hull.evaluate(pts), vals)
    return PWLConvexFunction(grid, env, certified=True, _hull=hull)


def subgradient_polytope(u: PWLConvexFunction, x: int, bound: float | None = None,
                         candidates=None) -> SubgradientPolytope:
    """Subgradient set of ``u`` at node ``x`` by half-plane intersection.

    Clips the box ``[-bound, bound]^2`` with ``p . (y - x) <= u(y) - u(x)``
    for the facet neighbours of ``x`` in the lower hull (these constraints
    imply the ones for every other node), or for ``candidates`` if given.
    """
    if not u.certified:
        raise ValueError("subgradient undefined for non-convex data")
    pts = u.points
    if bound is None:
        bound = u.default_bound()
    ys = u.neighbours()[x] if candidates is None else np.asarray(candidates, dtype=int)
    poly = box_polygon(-bound, bound, -bound, bound)
    x0, v0 = pts[x], u.values[x]
    for y in ys:
        if y == x:
            continue
        poly = clip_halfplane(poly, pts[y] - x0, float(u.values[y] - v0))
        if len(poly) == 0:
            break
    return SubgradientPolytope(poly)


# ---------------------------------------------------------------------------
# Quadrature over polygons
# ---------------------------------------------------------------------------

# Degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
_TRI_W = np.array([0.225, *[0.132394152788506] * 3, *[0.125939180544827] * 3])


def _tri_quad(tris: np.ndarray, g: Callable) -> float:
    pts = np.einsum("qk,tkd->tqd", _TRI_BARY, tris)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    area = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    vals = np.asarray(g(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:2])
    return float(np.sum(area * (vals @ _TRI_W)))


def _refine(tris: np.ndarray) -> np.ndarray:
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return np.concatenate([
        np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)])


def integrate_density_over_polytope(P, g: Callable, rtol: float = 1e-10, max_level: int = 6) -> float:
    """Integral of ``g`` over a convex polygon.

    Fan triangulation from the vertex centroid and a degree-5 triangle rule,
    refined by midpoint subdivision until successive estimates differ by
    less than ``rtol * area``.  Degenerate polygons integrate to 0.
    """
    v = np.asarray(getattr(P, "vertices", P), dtype=float)
    if len(v) < 3:
        return 0.0
    area = polygon_area(v)
    if area <= 0:
        return 0.0
    c = v.mean(axis=0)
    tris = np.stack([np.broadcast_to(c, v.shape), v, np.roll(v, -1, axis=0)], axis=1)
    est = _tri_quad(tris, g)
    for _ in range(max_level):
        tris = _refine(tris)
        new = _tri_quad(tris, g)
        if abs(new - est) < rtol * area:
            return new
        est = new
    return est
