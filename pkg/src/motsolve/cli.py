"""
Batch front-end: ``motsolve <config-file>``.

The configuration is a flat list of ``key = value`` lines; ``#`` starts a
comment.  Every artifact is written to the configured output directory
under a fixed file name.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .geometry import ConvexTarget
from .grid import build_grid
from .operators import Scheme, SchemeConfig
from .problem import CASES, DensityPair, make_case
from .solver import SolverError, solve
from .verify import comparison_suite, convergence_study, demo_1d, discrete_measure, underestimation_suite

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "main"]

COMMANDS = ("solve", "study", "verify", "demo1d")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "solve"
    case: str = "identity"
    h: float = 0.125
    h_list: tuple[float, ...] = (0.125, 0.0625, 0.03125)
    N: int = 5
    alpha: float = 0.5
    tol: float = 1e-8
    max_iter: int = 1_000_000
    seed: int = 0
    trials: int = 100
    output: str = "out"
    which: str = "Ex1"
    n: int = 256
    # custom densities sampled on tensor grids
    f_grid: str | None = None
    g_grid: str | None = None
    L_f: float | None = None
    L_g: float | None = None
    domain: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)
    target: str | None = None
    explicit: set = field(default_factory=set, repr=False)

    @property
    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig(N=self.N, alpha=self.alpha)


def _number(text: str) -> float:
    text = text.strip()
    if "/" in text:
        return float(Fraction(text))
    return float(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(_number(t) for t in text.split(",") if t.strip())


def _integer(text: str) -> int:
    v = _number(text)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


_PARSERS = {
    "command": str, "case": str, "h": _number, "h_list": _floats, "N": _integer,
    "alpha": _number, "tol": _number, "max_iter": _integer, "cap": _integer,
    "seed": _integer, "trials": _integer, "output": str, "which": str, "n": _integer,
    "f_grid": str, "g_grid": str, "L_f": _number, "L_g": _number, "domain": _floats,
    "target": str,
}


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a validated :class:`RunConfig`."""
    cfg = RunConfig()
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        try:
            parsed = _PARSERS[key](value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: malformed value for '{key}': {value!r}") from exc
        if key == "cap":
            key = "max_iter"
        setattr(cfg, key, parsed)
        cfg.explicit.add(key)
        lines[key] = lineno
    _validate(cfg, lines)
    return cfg


def _validate(cfg: RunConfig, lines: dict) -> None:
    def fail(key, msg):
        where = f"line {lines[key]}: " if key in lines else ""
        raise ConfigError(f"{where}{msg}")

    if cfg.command not in COMMANDS:
        fail("command", f"command must be one of {', '.join(COMMANDS)}")
    if cfg.f_grid is None and cfg.case not in CASES:
        fail("case", f"unknown case '{cfg.case}'")
    if (cfg.f_grid is None) != (cfg.g_grid is None):
        fail("f_grid" if "f_grid" in lines else "g_grid", "custom densities need both f_grid and g_grid")
    if cfg.f_grid is not None:
        for key in ("L_f", "L_g", "target"):
            if getattr(cfg, key) is None:
                raise ConfigError(f"custom densities need '{key}'")
    if not cfg.h > 0:
        fail("h", "h must be positive")
    if not cfg.h_list or any(v <= 0 for v in cfg.h_list):
        fail("h_list", "h_list must contain positive values")
    if any(b >= a for a, b in zip(cfg.h_list, cfg.h_list[1:])):
        fail("h_list", "h_list must be decreasing")
    if cfg.N < 2:
        fail("N", "N must be >= 2")
    if not 0 < cfg.alpha <= 1:
        fail("alpha", "alpha out of range (0,1]")
    if not cfg.tol > 0:
        fail("tol", "tol must be positive")
    if cfg.max_iter < 1:
        fail("max_iter" if "max_iter" in lines else "cap", "iteration cap must be >= 1")
    if cfg.trials < 1:
        fail("trials", "trials must be >= 1")
    if cfg.which not in ("Ex1", "Ex2", "Ex3"):
        fail("which", "which must be Ex1, Ex2 or Ex3")
    if cfg.n < 16:
        fail("n", "n must be >= 16")
    if len(cfg.domain) != 4 or not (cfg.domain[1] > cfg.domain[0] and cfg.domain[3] > cfg.domain[2]):
        fail("domain", "domain must be x0,x1,y0,y1 with x0 < x1 and y0 < y1")
    for key in ("L_f", "L_g"):
        v = getattr(cfg, key)
        if v is not None and v < 0:
            fail(key, f"{key} must be non-negative")


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------

def parse_target(spec: str) -> ConvexTarget:
    """``rectangle: x0,x1,y0,y1`` | ``disc: cx,cy,r`` | ``polygon: x y; x y; ...``."""
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    if kind == "rectangle":
        return ConvexTarget.rectangle(*_floats(rest))
    if kind == "disc":
        cx, cy, r = _floats(rest)
        return ConvexTarget.disc((cx, cy), r)
    if kind == "polygon":
        verts = [tuple(map(_number, p.split())) for p in rest.split(";") if p.strip()]
        return ConvexTarget.polygon(verts)
    raise ConfigError(f"unknown target kind '{kind}'")


def _load_sampled(path: str):
    """Bilinear interpolant of ``x,y,value`` samples on a tensor grid."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    data = np.array([[float(v) for v in r[:3]] for r in rows])
    xs, ys = np.unique(data[:, 0]), np.unique(data[:, 1])
    if len(xs) * len(ys) != len(data):
        raise ConfigError(f"{path}: samples do not form a tensor grid")
    vals = np.full((len(xs), len(ys)), np.nan)
    vals[np.searchsorted(xs, data[:, 0]), np.searchsorted(ys, data[:, 1])] = data[:, 2]
    if np.any(vals < 0):
        raise ConfigError(f"{path}: densities must be non-negative")
    interp = RegularGridInterpolator((xs, ys), vals, bounds_error=False, fill_value=None)

    def fn(p):
        p = np.asarray(p, dtype=float)
        q = p.reshape(-1, 2)
        # clamp to the sampled box so the extension stays Lipschitz
        q = np.column_stack([np.clip(q[:, 0], xs[0], xs[-1]), np.clip(q[:, 1], ys[0], ys[-1])])
        return interp(q).reshape(p.shape[:-1])

    return fn


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def build_problem(cfg: RunConfig):
    """Manufactured case or custom :class:`DensityPair` for the configuration."""
    if cfg.f_grid is None:
        return make_case(cfg.case)
    Y = parse_target(cfg.target)
    return DensityPair(_load_sampled(cfg.f_grid), _load_sampled(cfg.g_grid), cfg.L_f, cfg.L_g,
                       tuple(cfg.domain), Y)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _solution_csv(grid, scheme, u) -> str:
    h = grid.h
    T = np.full((grid.n, 2), np.nan)
    n = scheme.n_int
    T[:n] = np.column_stack([(u[scheme.plus[k]] - u[scheme.minus[k]]) / (2 * h) for k in (0, 1)])
    lines = ["node,x,y,u,T1,T2\n"]
    for k in range(grid.n):
        lines.append(f"{k},{grid.points[k, 0]:.17g},{grid.points[k, 1]:.17g},{u[k]:.17g},"
                     f"{T[k, 0]:.17g},{T[k, 1]:.17g}\n")
    return "".join(lines)


def _threads() -> int:
    raw = os.environ.get("MOTSOLVE_THREADS", "0")
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"MOTSOLVE_THREADS must be an integer, got {raw!r}") from None
    if v < 0:
        raise ConfigError("MOTSOLVE_THREADS must be >= 0")
    return v


def run(cfg: RunConfig, out=sys.stdout) -> int:
    """Execute the configured command; returns the process exit status."""
    _threads()
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    dp = problem.densities if hasattr(problem, "densities") else problem
    sc = cfg.scheme_config

    if cfg.command == "solve":
        grid = build_grid(dp.X, cfg.h)
        scheme = Scheme(grid, dp, sc)
        try:
            uh, rep = solve(scheme, grid, tol=cfg.tol, max_iter=cfg.max_iter)
            status = 0
        except SolverError as exc:
            uh, rep, status = exc.best, exc.report, 1
            print(f"solver failed: {exc}", file=out)
        (outdir / "solution.csv").write_text(_solution_csv(grid, scheme, uh.values))
        (outdir / "report.txt").write_text(rep.to_text())
        (outdir / "iterations.csv").write_text(rep.log_csv())
        print(rep.to_text(), end="", file=out)
        return status

    if cfg.command == "study":
        if not hasattr(problem, "u_exact"):
            raise ConfigError("study needs a manufactured case")
        try:
            table = convergence_study(problem, cfg.h_list, sc, tol=cfg.tol, max_iter=cfg.max_iter)
        except SolverError as exc:
            print(f"solver failed: {exc}", file=out)
            return 1
        (outdir / "study.csv").write_text(table.to_csv())
        e_ok, m_ok = table.strictly_decreasing("e"), table.strictly_decreasing("m")
        text = (f"case = {problem.name}\nlevels = {len(table.rows)}\n"
                f"e_strictly_decreasing = {str(e_ok).lower()}\nm_strictly_decreasing = {str(m_ok).lower()}\n")
        (outdir / "report.txt").write_text(text)
        print(text, end="", file=out)
        return 0 if (e_ok and m_ok) else 1

    if cfg.command == "verify":
        grid = build_grid(dp.X, cfg.h)
        scheme = Scheme(grid, dp, sc)
        mu = discrete_measure(dp, grid)
        under = underestimation_suite(grid, dp, cfg=sc, trials=cfg.trials, seed=cfg.seed, scheme=scheme, mu=mu)
        comp = comparison_suite(grid, dp, cfg=sc, seed=cfg.seed, scheme=scheme)
        (outdir / "verify.csv").write_text(under.trials_csv())
        text = "[underestimation]\n" + under.summary() + "[comparison]\n" + comp.summary()
        (outdir / "report.txt").write_text(text)
        print(text, end="", file=out)
        return 0 if (under.ok and comp.ok) else 1

    # demo1d
    rep = demo_1d(cfg.which, cfg.n)
    (outdir / "u.dat").write_text(rep.dat("u"))
    (outdir / "v.dat").write_text(rep.dat("v"))
    (outdir / "report.txt").write_text(rep.summary())
    print(rep.summary(), end="", file=out)
    ok = (rep.interior_residual <= 1e-8 and rep.boundary_residual <= 1e-3
          and rep.v_min_operator >= 0 and rep.comparison_fails)
    return 0 if ok else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="motsolve", description=__doc__.strip().splitlines()[0])
    ap.add_argument("config", help="path to a key = value configuration file")
    args = ap.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
        return run(cfg)
    except ConfigError as exc:
        print(f"motsolve: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"motsolve: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
