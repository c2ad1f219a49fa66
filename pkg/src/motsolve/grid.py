"""
Discretisation point sets on a rectangle.

Interior nodes form a uniform Cartesian lattice of spacing ``h``; boundary
nodes subdivide every lattice interval on the boundary into ``k`` equal
pieces with ``h / k <= h**1.5``, so all lattice points on the boundary are
nodes and wide stencils near the edge never need snapping.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .geometry import box_polygon, clip_halfplane, polygon_area

INTERIOR, BOUNDARY = 0, 1


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable node set over the rectangle ``[x0, x1] x [y0, y1]``."""

    domain: tuple[float, float, float, float]
    h: float
    points: np.ndarray
    kind: np.ndarray
    nx: int
    ny: int
    k: int
    lattice_index: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(self.kind == INTERIOR))

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.kind == INTERIOR)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.kind == BOUNDARY)

    @property
    def boundary_spacing(self) -> float:
        return self.h / self.k

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def areas(self) -> np.ndarray:
        return _voronoi_areas(self)

    def lattice_coords(self, node: int) -> tuple[int, int] | None:
        """Integer lattice coordinates of a node, or None for off-lattice boundary nodes."""
        x0, _, y0, _ = self.domain
        p = self.points[node]
        i = (p[0] - x0) / self.h
        j = (p[1] - y0) / self.h
        ri, rj = round(i), round(j)
        if abs(i - ri) > 1e-9 or abs(j - rj) > 1e-9:
            return None
        return int(ri), int(rj)

    def shift(self, node: int, e) -> int:
        """Index of the node at ``x + h e`` for a lattice node ``x``; -1 if outside the closed domain."""
        ij = self.lattice_coords(node)
        if ij is None:
            return -1
        i, j = ij[0] + int(e[0]), ij[1] + int(e[1])
        if 0 <= i <= self.nx and 0 <= j <= self.ny:
            return int(self.lattice_index[i, j])
        return -1

    def shift_all(self, nodes: np.ndarray, e) -> np.ndarray:
        """Vectorised :meth:`shift` for interior lattice nodes."""
        x0, _, y0, _ = self.domain
        p = self.points[nodes]
        i = np.rint((p[:, 0] - x0) / self.h).astype(int) + int(e[0])
        j = np.rint((p[:, 1] - y0) / self.h).astype(int) + int(e[1])
        ok = (i >= 0) & (i <= self.nx) & (j >= 0) & (j <= self.ny)
        out = np.full(len(nodes), -1, dtype=int)
        out[ok] = self.lattice_index[i[ok], j[ok]]
        return out

    def distance_to_boundary(self, p) -> np.ndarray:
        x0, x1, y0, y1 = self.domain
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        return np.minimum.reduce([p[:, 0] - x0, x1 - p[:, 0], p[:, 1] - y0, y1 - p[:, 1]])

    def voronoi_area(self, node: int) -> float:
        if not 0 <= node < self.n:
            raise IndexError(f"unknown node {node}")
        return float(self.areas[node])

    def to_csv(self, values=None) -> str:
        buf = io.StringIO()
        buf.write("node,x,y,kind,area,value\n")
        vals = np.full(self.n, np.nan) if values is None else np.asarray(values, dtype=float)
        for k in range(self.n):
            kind = "interior" if self.kind[k] == INTERIOR else "boundary"
            buf.write(f"{k},{self.points[k, 0]:.17g},{self.points[k, 1]:.17g},{kind},"
                      f"{self.areas[k]:.17g},{vals[k]:.17g}\n")
        return buf.getvalue()


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise ValueError("one value per node required")

    def to_csv(self) -> str:
        return self.grid.to_csv(self.values)


def build_grid(X, h: float) -> Grid:
    """Interior lattice of spacing ``h`` plus densified boundary nodes.

    ``X`` is ``(x0, x1, y0, y1)``.  Both side lengths must be integer
    multiples of ``h``.  Ordering: interior nodes row by row from the bottom,
    then boundary nodes counterclockwise from the lower-left corner.
    """
    x0, x1, y0, y1 = map(float, X)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("empty domain")
    if not h > 0:
        raise ValueError("h must be positive")
    if h > min(x1 - x0, y1 - y0) / 4 * (1 + 1e-12):
        raise ValueError("resolution insufficient")
    nx, ny = (x1 - x0) / h, (y1 - y0) / h
    if abs(nx - round(nx)) > 1e-9 * nx or abs(ny - round(ny)) > 1e-9 * ny:
        raise ValueError("side lengths must be integer multiples of h")
    nx, ny = int(round(nx)), int(round(ny))
    k = max(1, math.ceil(h ** -0.5 - 1e-12))

    lattice_index = np.full((nx + 1, ny + 1), -1, dtype=int)
    pts = []
    for j in range(1, ny):
        for i in range(1, nx):
            lattice_index[i, j] = len(pts)
            pts.append((x0 + i * h, y0 + j * h))
    n_int = len(pts)

    # boundary, counterclockwise from (x0, y0), k points per lattice interval
    def add(i_num, j_num):
        # coordinates in units of h/k
        i, ri = divmod(i_num, k)
        j, rj = divmod(j_num, k)
        if ri == 0 and rj == 0:
            lattice_index[i, j] = len(pts)
        px = x0 + i * h if ri == 0 else x0 + i_num * h / k
        py = y0 + j * h if rj == 0 else y0 + j_num * h / k
        pts.append((px, py))

    for s in range(nx * k):
        add(s, 0)
    for s in range(ny * k):
        add(nx * k, s)
    for s in range(nx * k, 0, -1):
        add(s, ny * k)
    for s in range(ny * k, 0, -1):
        add(0, s)

    points = np.array(pts, dtype=float)
    # snap exact edge coordinates
    points[n_int:, 0] = np.where(np.isclose(points[n_int:, 0], x1), x1, points[n_int:, 0])
    points[n_int:, 1] = np.where(np.isclose(points[n_int:, 1], y1), y1, points[n_int:, 1])
    kind = np.full(len(points), BOUNDARY, dtype=np.int8)
    kind[:n_int] = INTERIOR
    points.setflags(write=False)
    kind.setflags(write=False)
    lattice_index.setflags(write=False)
    return Grid((x0, x1, y0, y1), float(h), points, kind, nx, ny, k, lattice_index)


def _voronoi_areas(grid: Grid) -> np.ndarray:
    h = grid.h
    areas = np.full(grid.n, h * h)
    x0, x1, y0, y1 = grid.domain
    dist = grid.distance_to_boundary(grid.points)
    near = np.flatnonzero(dist <= 1.5 * h)
    rect = box_polygon(x0, x1, y0, y1)
    tree = grid.tree
    for node in near:
        p = grid.points[node]
        poly = rect
        for other in tree.query_ball_point(p, 3.0 * h):
            if other == node:
                continue
            q = grid.points[other]
            d = q - p
            poly = clip_halfplane(poly, d, float(d @ (p + q) / 2))
        areas[node] = polygon_area(poly)
    return areas


def voronoi_cell(grid: Grid, node: int) -> np.ndarray:
    """Vertices of the Voronoi cell of ``node`` clipped to the domain."""
    x0, x1, y0, y1 = grid.domain
    p = grid.points[node]
    poly = box_polygon(x0, x1, y0, y1)
    for other in grid.tree.query_ball_point(p, 3.0 * grid.h):
        if other != node:
            d = grid.points[other] - p
            poly = clip_halfplane(poly, d, float(d @ (p + grid.points[other]) / 2))
    return poly


def nn_extension(u: GridFunction, x, rtol: float = 1e-12) -> np.ndarray | float:
    """Piecewise-constant nearest-node extension, taking the sup over ties."""
    grid = u.grid
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    q = x.reshape(-1, 2)
    d, _ = grid.tree.query(q)
    out = np.empty(len(q))
    scale = max(grid.domain[1] - grid.domain[0], grid.domain[3] - grid.domain[2])
    for k in range(len(q)):
        ties = grid.tree.query_ball_point(q[k], d[k] + rtol * scale)
        out[k] = u.values[ties].max()
    return float(out[0]) if scalar else out
