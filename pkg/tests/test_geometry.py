import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motsolve.geometry import (
    ConvexTarget, PWLConvexFunction, box_polygon, clip_halfplane, compute_M, convex_envelope_pwl,
    inner_diameter, integrate_density_over_polytope, intersect_convex, polygon_area,
    polygon_from_csv, polygon_to_csv, signed_distance, subgradient_polytope,
)
from motsolve.verify import envelope_lp_oracle, polytope_area_sampling


def test_polygon_area_orientation():
    sq = box_polygon(0, 2, 0, 1)
    assert polygon_area(sq) == pytest.approx(2.0)
    assert polygon_area(sq[::-1]) == pytest.approx(-2.0)


def test_clip_halfplane_keeps_inside():
    sq = box_polygon(-1, 1, -1, 1)
    half = clip_halfplane(sq, np.array([1.0, 0.0]), 0.0)
    assert polygon_area(half) == pytest.approx(2.0)
    assert len(clip_halfplane(sq, np.array([1.0, 0.0]), -2.0)) == 0


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1.5, 1.5))
def test_clip_result_satisfies_constraint(a1, a2, b):
    if abs(a1) + abs(a2) < 1e-3:
        return
    a = np.array([a1, a2])
    poly = clip_halfplane(box_polygon(-1, 1, -1, 1), a, b)
    if len(poly):
        assert np.all(poly @ a <= b + 1e-9)
        assert 0 <= polygon_area(poly) <= 4 + 1e-12


def test_intersect_convex_squares():
    P = box_polygon(0, 2, 0, 2)
    Q = box_polygon(1, 3, 1, 3)
    assert polygon_area(intersect_convex(P, Q)) == pytest.approx(1.0)


def test_polygon_csv_roundtrip():
    P = box_polygon(0, 0.1, -1 / 3, 2)
    assert np.array_equal(polygon_from_csv(polygon_to_csv(P)), P)


def test_target_validation():
    with pytest.raises(ValueError):
        ConvexTarget.polygon([[0, 0], [1, 0], [2, 0], [0, 1]])
    with pytest.raises(ValueError):
        ConvexTarget.disc((0, 0), 0.0)


def test_signed_distance_square():
    Y = ConvexTarget.rectangle(-1, 1, -1, 1)
    assert signed_distance(Y, np.array([0.0, 0.0])) == pytest.approx(-1.0)
    assert signed_distance(Y, np.array([2.0, 0.0])) == pytest.approx(1.0)
    assert signed_distance(Y, np.array([2.0, 2.0])) == pytest.approx(math.sqrt(2))
    assert signed_distance(Y, np.array([1.0, 0.3])) == pytest.approx(0.0)


def test_signed_distance_matches_boundary_sampling():
    Y = ConvexTarget.polygon([[0, 0], [2, 0], [3, 1.5], [1, 2.5], [-0.5, 1]])
    v = Y.vertices
    t = np.linspace(0, 1, 2001)[:, None]
    bd = np.concatenate([v[i] + t * (v[(i + 1) % len(v)] - v[i]) for i in range(len(v))])
    p = np.random.default_rng(3).uniform(-2, 4, (2000, 2))
    sd = signed_distance(Y, p)
    ref = np.sqrt(((p[:, None, :] - bd[None]) ** 2).sum(-1)).min(axis=1)
    assert np.abs(np.abs(sd) - ref).max() < 1e-3
    assert np.array_equal(sd <= 0, Y.contains(p))


def test_signed_distance_disc():
    Y = ConvexTarget.disc((1, 0), 2)
    assert signed_distance(Y, np.array([1.0, 0.0])) == pytest.approx(-2.0)
    assert signed_distance(Y, np.array([4.0, 0.0])) == pytest.approx(1.0)


@pytest.mark.parametrize("Y, M", [
    (ConvexTarget.rectangle(-1, 1, -1, 1), 2),
    (ConvexTarget.rectangle(-2, 2, -2, 2), 2),
    (ConvexTarget.rectangle(-2, 2, -0.5, 0.5), 6),
])
def test_sample_count(Y, M):
    assert compute_M(Y) == M


def test_inner_diameter():
    Y = ConvexTarget.rectangle(-2, 2, -0.5, 0.5)
    assert Y.inradius == pytest.approx(0.5)
    assert inner_diameter(Y) == pytest.approx(math.sqrt(2) / 2)
    assert ConvexTarget.disc((0, 0), 1).D == pytest.approx(math.sqrt(2))


def _lattice(n, lo=-1.0, hi=1.0):
    xs = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def test_envelope_matches_lp_oracle():
    rng = np.random.default_rng(5)
    pts = _lattice(5)
    for _ in range(10):
        vals = rng.normal(size=len(pts))
        env = convex_envelope_pwl(pts, vals).values
        assert np.abs(env - envelope_lp_oracle(pts, vals)).max() <= 1e-8


def test_envelope_of_convex_data_is_identity():
    pts = _lattice(6)
    vals = 0.5 * (pts ** 2).sum(1)
    u = PWLConvexFunction.certify(pts, vals)
    assert u.certified
    assert not PWLConvexFunction.certify(pts, -vals).certified


def test_subgradient_requires_convexity():
    pts = _lattice(4)
    u = PWLConvexFunction.certify(pts, -(pts ** 2).sum(1))
    with pytest.raises(ValueError, match="non-convex"):
        subgradient_polytope(u, 5)


def test_subgradient_of_quadratic_interpolant():
    pts = _lattice(9)
    h = 0.25
    u = convex_envelope_pwl(pts, 0.5 * (pts ** 2).sum(1))
    centre = 40
    P = subgradient_polytope(u, centre)
    # the cell of a lattice node for |x|^2 / 2 is a square of side h
    assert P.area == pytest.approx(h * h, rel=1e-9)
    box = (-0.5, 0.5, -0.5, 0.5)
    est = polytope_area_sampling(pts, u.values, centre, box, 100_000)
    assert est == pytest.approx(P.area, rel=0.05)


def test_affine_data_has_point_subgradient():
    pts = _lattice(5)
    vals = pts @ np.array([0.3, -0.2]) + 1
    u = convex_envelope_pwl(pts, vals)
    P = subgradient_polytope(u, 12)
    assert P.area == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(P.vertices.mean(axis=0), [0.3, -0.2])


def test_envelope_degenerate_input():
    with pytest.raises(ValueError):
        convex_envelope_pwl(np.array([[0, 0], [1, 1], [2, 2.0]]), np.zeros(3))


@pytest.mark.parametrize("deg", [0, 1, 2, 3, 4])
def test_polygon_quadrature_polynomials(deg):
    P = ConvexTarget.polygon([[0, 0], [2, 0], [3, 1.5], [1, 2.5], [-0.5, 1]]).vertices
    g = lambda p: p[..., 0] ** deg + p[..., 1]
    val = integrate_density_over_polytope(P, g)
    # reference: fine tensor midpoint restricted to the polygon
    Y = ConvexTarget.polygon(P)
    n = 1200
    xs = np.linspace(-0.5, 3, n + 1)
    ys = np.linspace(0, 2.5, n + 1)
    cx, cy = (xs[1:] + xs[:-1]) / 2, (ys[1:] + ys[:-1]) / 2
    X, Yg = np.meshgrid(cx, cy, indexing="ij")
    q = np.column_stack([X.ravel(), Yg.ravel()])
    ref = float((g(q) * Y.contains(q)).sum() * (xs[1] - xs[0]) * (ys[1] - ys[0]))
    assert val == pytest.approx(ref, rel=5e-3)


def test_quadrature_exact_on_area():
    P = box_polygon(0, 1, 0, 3)
    assert integrate_density_over_polytope(P, lambda p: np.ones(p.shape[:-1])) == pytest.approx(3.0, rel=1e-14)
    assert integrate_density_over_polytope(P, lambda p: p[..., 0] * p[..., 1]) == pytest.approx(9 / 4, rel=1e-12)


def test_rectangle_fast_path_matches_polygon_distance():
    from motsolve.geometry import _outside_distance

    Y = ConvexTarget.rectangle(-2, 2, -0.5, 0.5)
    assert Y.box == (0.0, 0.0, 2.0, 0.5)
    assert ConvexTarget.polygon([[0, 0], [1, 0], [0, 1]]).box is None
    q = np.random.default_rng(3).uniform(-4, 4, size=(5000, 2))
    normals, offsets = Y.facets
    ref = (q @ normals.T - offsets).max(axis=1)
    out = ref > 0
    ref[out] = _outside_distance(Y.vertices, q[out])
    assert np.abs(signed_distance(Y, q) - ref).max() < 1e-12
