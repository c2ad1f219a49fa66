"""
Problem data: density pairs with declared Lipschitz constants and a small
library of manufactured transport problems with closed-form potentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .geometry import ConvexTarget, integrate_density_over_polytope

Field = Callable[[np.ndarray], np.ndarray]


def _const(c: float) -> Field:
    def fn(p):
        p = np.asarray(p, dtype=float)
        return np.full(p.shape[:-1], c)
    return fn


@dataclass(frozen=True)
class DensityPair:
    """Source density ``f`` on the rectangle ``X`` and target density ``g``.

    ``g`` is a Lipschitz evaluator on the whole plane (constant ``L_g``);
    the actual target density is ``g`` restricted to the closure of ``Y``,
    see :meth:`g_target`.  The schemes only ever evaluate ``g``.
    """

    f: Field
    g: Field
    L_f: float
    L_g: float
    X: tuple[float, float, float, float]
    Y: ConvexTarget
    factor: float = 1.0

    def f_values(self, p) -> np.ndarray:
        return self.factor * np.asarray(self.f(p), dtype=float)

    def g_target(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.where(self.Y.contains(p), self.g(p), 0.0)

    @property
    def L_f_scaled(self) -> float:
        return self.factor * self.L_f

    def mass_f(self, h: float = 1 / 16) -> float:
        return _gauss_rectangle(self.f_values, self.X, h)

    def mass_g(self, h: float = 1 / 16) -> float:
        Y = self.Y
        if Y.is_disc:
            return _midpoint_disc(self.g, Y.center, Y.radius, h / 4)
        return integrate_density_over_polytope(Y.vertices, self.g)


def _gauss_rectangle(fn: Field, X, step: float, order: int = 4) -> float:
    """Composite tensor Gauss-Legendre rule on cells of size about ``step``."""
    x0, x1, y0, y1 = X
    nx = max(1, math.ceil((x1 - x0) / step))
    ny = max(1, math.ceil((y1 - y0) / step))
    t, w = np.polynomial.legendre.leggauss(order)
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    xs = (x0 + (np.arange(nx)[:, None] + 0.5 * (t + 1)) * hx).ravel()
    ys = (y0 + (np.arange(ny)[:, None] + 0.5 * (t + 1)) * hy).ravel()
    wx = np.tile(w, nx) * hx / 2
    wy = np.tile(w, ny) * hy / 2
    total = 0.0
    for y, wyk in zip(ys, wy):
        row = np.column_stack([xs, np.full(len(xs), y)])
        total += wyk * float(np.dot(wx, fn(row)))
    return total


def _midpoint_disc(fn: Field, center, radius: float, step: float) -> float:
    nr = max(1, math.ceil(radius / step))
    r = (np.arange(nr) + 0.5) * radius / nr
    nt = max(8, math.ceil(2 * math.pi * radius / step))
    t = (np.arange(nt) + 0.5) * 2 * math.pi / nt
    R, T = np.meshgrid(r, t, indexing="ij")
    pts = np.stack([center[0] + R * np.cos(T), center[1] + R * np.sin(T)], axis=-1)
    vals = np.asarray(fn(pts.reshape(-1, 2))).reshape(R.shape)
    return float(np.sum(vals * R)) * (radius / nr) * (2 * math.pi / nt)


def mass_balance_normalise(dp: DensityPair, h: float = 1 / 16, rtol: float = 1e-8) -> DensityPair:
    """Rescale ``f`` so that both masses agree; the applied factor is kept on the result."""
    mf, mg = dp.mass_f(h), dp.mass_g(h)
    if not (mf > 0 and mg > 0):
        raise ValueError("degenerate density")
    factor = dp.factor * mg / mf
    if abs(factor / dp.factor - 1.0) <= rtol:
        return dp
    return replace(dp, factor=factor)


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    X: tuple[float, float, float, float]
    Y: ConvexTarget
    densities: DensityPair
    u_exact: Field
    T_exact: Field
    hess_det: Field = field(repr=False)

    def pde_residual(self, p) -> np.ndarray:
        """``g(T(x)) det D^2 u(x) - f(x)`` with the true target density."""
        p = np.asarray(p, dtype=float)
        dp = self.densities
        return dp.g_target(self.T_exact(p)) * self.hess_det(p) - dp.f_values(p)


CASES = ("identity", "anisotropic", "separable-quartic")


def make_case(name: str, a: float = 2.0, b: float = 0.5) -> ManufacturedCase:
    """Manufactured problems on ``X = (-1, 1)^2``.

    identity
        ``Y = X``, ``f = g = 1``, ``u = |x|^2 / 2``.
    anisotropic
        ``Y = (-a, a) x (-b, b)``, ``f = ab``, ``g = 1``, ``u = (a x1^2 + b x2^2) / 2``.
    separable-quartic
        ``Y = (-2, 2)^2``, ``g = 1``, ``f = (3 x1^2 + 1)(3 x2^2 + 1)``,
        ``u = x1^4/4 + x1^2/2 + x2^4/4 + x2^2/2``.
    """
    X = (-1.0, 1.0, -1.0, 1.0)
    if name == "identity":
        Y = ConvexTarget.rectangle(-1, 1, -1, 1)
        dp = DensityPair(_const(1.0), _const(1.0), 0.0, 0.0, X, Y)

        def u(p):
            p = np.asarray(p, dtype=float)
            return 0.5 * (p[..., 0] ** 2 + p[..., 1] ** 2)

        def T(p):
            return np.asarray(p, dtype=float).copy()

        return ManufacturedCase(name, X, Y, dp, u, T, _const(1.0))

    if name == "anisotropic":
        if not (a > 0 and b > 0):
            raise ValueError("anisotropy factors must be positive")
        Y = ConvexTarget.rectangle(-a, a, -b, b)
        dp = DensityPair(_const(a * b), _const(1.0), 0.0, 0.0, X, Y)

        def u(p):
            p = np.asarray(p, dtype=float)
            return 0.5 * (a * p[..., 0] ** 2 + b * p[..., 1] ** 2)

        def T(p):
            p = np.asarray(p, dtype=float)
            return np.stack([a * p[..., 0], b * p[..., 1]], axis=-1)

        return ManufacturedCase(name, X, Y, dp, u, T, _const(a * b))

    if name == "separable-quartic":
        Y = ConvexTarget.rectangle(-2, 2, -2, 2)

        def f(p):
            p = np.asarray(p, dtype=float)
            return (3 * p[..., 0] ** 2 + 1) * (3 * p[..., 1] ** 2 + 1)

        # |grad f| <= sqrt(24^2 + 24^2) on the closed square
        dp = DensityPair(f, _const(1.0), 24.0 * math.sqrt(2.0), 0.0, X, Y)

        def u(p):
            p = np.asarray(p, dtype=float)
            x, y = p[..., 0], p[..., 1]
            return x ** 4 / 4 + x ** 2 / 2 + y ** 4 / 4 + y ** 2 / 2

        def T(p):
            p = np.asarray(p, dtype=float)
            return np.stack([p[..., 0] ** 3 + p[..., 0], p[..., 1] ** 3 + p[..., 1]], axis=-1)

        return ManufacturedCase(name, X, Y, dp, u, T, f)

    raise ValueError(f"unknown case {name!r}; expected one of {', '.join(CASES)}")
