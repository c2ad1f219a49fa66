import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motsolve.grid import build_grid
from motsolve.operators import (
    Scheme, SchemeConfig, build_direction_stencil, direction_set, enumerate_superbases, lbr_G,
    second_difference, weighted_gradient,
)
from motsolve.problem import make_case

X = (-1.0, 1.0, -1.0, 1.0)


@pytest.fixture(scope="module")
def identity8():
    case = make_case("identity")
    grid = build_grid(X, 1 / 8)
    return case, grid, Scheme(grid, case.densities)


def _centre(grid):
    return int(np.argmin(np.hypot(*grid.points.T)))


def test_superbase_counts():
    assert len(enumerate_superbases(2)) == 2
    sbs = enumerate_superbases(5)
    assert len(sbs) == 6
    for sb in sbs:
        e, f, g = sb.vectors
        assert abs(e[0] * f[1] - e[1] * f[0]) == 1
        assert (e[0] + f[0] + g[0], e[1] + f[1] + g[1]) == (0, 0)
        assert all(max(map(abs, v)) < math.sqrt(5) for v in sb.vectors)
    with pytest.raises(ValueError):
        enumerate_superbases(1)


def test_lbr_G_cases():
    assert lbr_G(5, 1, 2) == 2.0          # a >= b + c
    assert lbr_G(1, 5, 2) == 2.0
    assert lbr_G(1, 2, 5) == 2.0
    # symmetric case: 0.5 * 3 - 0.25 * 3
    assert lbr_G(1, 1, 1) == pytest.approx(0.75)
    assert lbr_G(0, 0, 0) == 0.0


def _quadratic(grid, A):
    p = grid.points
    return 0.5 * np.einsum("ij,jk,ik->i", p, np.asarray(A, float), p)


@pytest.mark.parametrize("A, det", [(np.eye(2), 1.0), (np.diag([2.0, 3.0]), 6.0),
                                    ([[2.0, 0.5], [0.5, 1.0]], 1.75)])
def test_det_exact_on_quadratics(identity8, A, det):
    _, grid, S = identity8
    d = S.det_h(_quadratic(grid, A))
    assert np.abs(d - det).max() <= 1e-12


def test_second_difference_scaling(identity8):
    _, grid, _ = identity8
    u = _quadratic(grid, np.eye(2))
    assert second_difference(grid, u, _centre(grid), (1, 1)) == pytest.approx(2.0)


def test_second_difference_out_of_domain(identity8):
    _, grid, _ = identity8
    with pytest.raises(ValueError, match="out of domain"):
        second_difference(grid, np.zeros(grid.n), 0, (-2, 0))


def test_direction_set_count():
    h = 1 / 16
    d = direction_set(h)
    n = math.ceil(math.pi / math.sqrt(h))
    assert len(d) == n
    assert np.allclose(np.hypot(*d.T), 1.0)
    assert np.diff(np.arctan2(d[:, 1], d[:, 0])) == pytest.approx(np.full(n - 1, math.pi / n))


def test_direction_stencil_moments():
    grid = build_grid(X, 1 / 16)
    node = _centre(grid)
    for nu in direction_set(grid.h):
        st_ = build_direction_stencil(grid, node, nu)
        d = st_.offsets
        assert np.all(st_.coeffs >= 0)
        assert len(st_.nodes) <= 4
        assert np.abs(st_.coeffs @ d).max() < 1e-9
        assert 0.5 * st_.coeffs @ (d @ nu) ** 2 == pytest.approx(1.0)


def test_stencil_radius_excludes_tie():
    grid = build_grid(X, 1 / 8)
    node = _centre(grid)
    nu = np.array([1.0, 1.0]) / math.sqrt(2)
    st_ = build_direction_stencil(grid, node, nu)
    r = np.hypot(*st_.offsets.T)
    assert np.all(r < math.sqrt(grid.h))


def test_F2_on_quadratics():
    grid = build_grid(X, 1 / 64)
    S = Scheme(grid, make_case("identity").densities)
    x = grid.points[: S.n_int]
    inner = grid.distance_to_boundary(x) > 0.25
    F2_id = S.F2(_quadratic(grid, np.eye(2)))
    F2_saddle = S.F2(grid.points[:, 0] * grid.points[:, 1])
    assert np.abs(F2_id[inner] + 1).max() < 0.5
    assert np.abs(F2_saddle[inner] - 1).max() < 0.5


def test_F2_non_positive_on_convex(identity8):
    _, grid, S = identity8
    rng = np.random.default_rng(0)
    for _ in range(5):
        B = rng.normal(size=(2, 2))
        assert S.F2(_quadratic(grid, B @ B.T)).max() <= 1e-10


def test_F3_sign_and_weighted_gradient(identity8):
    case, grid, S = identity8
    node = _centre(grid)
    u = _quadratic(grid, np.eye(2))
    assert np.allclose(weighted_gradient(grid, u, node, 1, 1, 2), [0.0, 0.0], atol=1e-12)
    assert S.F3(u)[node] < 0
    steep = 3.0 * grid.points[:, 0]
    assert S.F3(steep)[node] == pytest.approx(2.0)


def test_zero_function_residual(identity8):
    _, grid, S = identity8
    F = S.evaluate(np.zeros(grid.n))
    node = _centre(grid)
    assert F[node] == pytest.approx(1.0 - grid.h ** 0.5)
    assert np.all(F[S.n_int:] == 0)


def test_boundary_rows_are_values(identity8):
    _, grid, S = identity8
    u = np.random.default_rng(1).normal(size=grid.n)
    assert np.array_equal(S.evaluate(u)[S.n_int:], u[S.n_int:])
    shifted = u.copy()
    shifted[: S.n_int] += 0.0
    shifted += 1.0
    F, G = S.evaluate(u), S.evaluate(shifted)
    assert np.allclose(F[: S.n_int], G[: S.n_int], atol=1e-12)
    assert np.allclose(G[S.n_int:] - F[S.n_int:], 1.0)


def test_node_function_matches_vectorised(identity8):
    _, grid, S = identity8
    u = np.random.default_rng(2).normal(size=grid.n)
    F = S.evaluate(u)
    for k in range(0, grid.n, 11):
        assert S.node_function(u, k)(u[k]) == pytest.approx(F[k], abs=1e-12)


def test_centre_override_equals_node_function(identity8):
    _, grid, S = identity8
    u = np.random.default_rng(3).normal(size=grid.n)
    t = u + 0.01
    G = S.evaluate(u, t)
    for k in range(0, S.n_int, 13):
        assert S.node_function(u, k)(t[k]) == pytest.approx(G[k], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-6, 1.0))
def test_monotone_in_own_value(seed, delta):
    grid = build_grid(X, 1 / 4)
    S = Scheme(grid, make_case("anisotropic").densities)
    u = np.random.default_rng(seed).normal(size=grid.n)
    assert np.all(S.evaluate(u, u + delta) >= S.evaluate(u) - 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-6, 1.0))
def test_monotone_in_neighbours(seed, delta):
    grid = build_grid(X, 1 / 4)
    S = Scheme(grid, make_case("separable-quartic").densities)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=grid.n)
    v = u.copy()
    y = int(rng.integers(grid.n))
    v[y] -= delta
    F, G = S.evaluate(u, u), S.evaluate(v, u)
    rows = np.arange(grid.n) != y
    assert np.all(G[rows] >= F[rows] - 1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(N=1)
    with pytest.raises(ValueError):
        SchemeConfig(alpha=1.5)


def test_cell_correction_only_near_boundary():
    grid = build_grid(X, 1 / 16)
    S = Scheme(grid, make_case("identity").densities)
    x = grid.points[: S.n_int]
    far = grid.distance_to_boundary(x) > 1.5 * grid.h
    assert np.all(S.cell_factor[far] == 1.0)
    assert np.all(S.cell_factor >= 1.0)
    plain = Scheme(grid, make_case("identity").densities, SchemeConfig(cell_correction=False))
    assert np.all(plain.cell_factor == 1.0)


def test_breakdown_csv(identity8):
    _, grid, S = identity8
    text = S.breakdown_csv(_quadratic(grid, np.eye(2)))
    lines = text.splitlines()
    assert lines[0] == "node,F1,F2,F3,argmax,combined"
    assert len(lines) == S.n_int + 1
