import numpy as np
import pytest

from motsolve.grid import BOUNDARY, INTERIOR, GridFunction, build_grid, nn_extension, voronoi_cell
from motsolve.geometry import polygon_area

X = (-1.0, 1.0, -1.0, 1.0)


def test_counts_coarse():
    g = build_grid(X, 0.5)
    assert g.n_interior == 9
    assert len(g.boundary) >= 23
    assert g.areas.sum() == pytest.approx(4.0, rel=1e-12)


def test_ordering_interior_first():
    g = build_grid(X, 0.25)
    assert np.all(g.kind[: g.n_interior] == INTERIOR)
    assert np.all(g.kind[g.n_interior:] == BOUNDARY)
    assert tuple(g.points[g.n_interior]) == (-1.0, -1.0)
    # row-major from the bottom
    first = g.points[: g.nx - 1]
    assert np.all(first[:, 1] == first[0, 1]) and np.all(np.diff(first[:, 0]) > 0)


def test_boundary_spacing():
    h = 1 / 16
    g = build_grid(X, h)
    assert g.boundary_spacing <= h ** 1.5 + 1e-15
    b = g.points[g.boundary]
    d = np.hypot(*np.diff(np.vstack([b, b[:1]]), axis=0).T)
    assert d.max() == pytest.approx(g.boundary_spacing)


def test_boundary_lattice_points_exact():
    g = build_grid(X, 1 / 8)
    for node in g.interior:
        for e in [(1, 0), (-1, 0), (0, 1), (0, -1), (2, 1), (-1, -2)]:
            y = g.shift(node, e)
            if y >= 0:
                assert np.allclose(g.points[y], g.points[node] + g.h * np.array(e), atol=1e-15)


def test_shift_outside():
    g = build_grid(X, 0.25)
    corner_adjacent = 0
    assert g.shift(corner_adjacent, (-2, 0)) == -1


def test_resolution_errors():
    with pytest.raises(ValueError, match="resolution insufficient"):
        build_grid(X, 0.6)
    with pytest.raises(ValueError):
        build_grid(X, 0.3)
    with pytest.raises(ValueError):
        build_grid((0, 1, 0, 1), -0.1)


def test_areas_interior_and_partition():
    g = build_grid(X, 1 / 16)
    far = g.distance_to_boundary(g.points) > 2 * g.h
    assert np.allclose(g.areas[far], g.h ** 2)
    assert g.areas.sum() == pytest.approx(4.0, rel=1e-10)
    assert g.voronoi_area(0) == pytest.approx(polygon_area(voronoi_cell(g, 0)))
    with pytest.raises(IndexError):
        g.voronoi_area(g.n)


def test_nn_extension_takes_sup_on_ties():
    g = build_grid(X, 0.5)
    vals = np.arange(g.n, dtype=float)
    u = GridFunction(g, vals)
    a, b = g.points[0], g.points[1]
    mid = (a + b) / 2
    assert nn_extension(u, mid) == max(vals[0], vals[1])
    assert nn_extension(u, a + 1e-3) == vals[0]


def test_grid_function_shape():
    g = build_grid(X, 0.5)
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(3))
    text = GridFunction(g, np.zeros(g.n)).to_csv()
    assert text.splitlines()[0] == "node,x,y,kind,area,value"
    assert len(text.splitlines()) == g.n + 1
