"""
Benchmark problems and user-defined problems.

A problem is a source ``f >= 0`` on a rectangle, Dirichlet data ``g`` and
optionally a known exact solution. The cone problem ``ex4`` has a point mass
instead of a function for ``f``; on a grid the mass is spread over the
nearest node(s) as ``mass / h^2`` so that ``h^2 * sum(f)`` is the mass.

Custom problems are read from JSON, with ``f``, ``g`` and ``exact`` given as
small arithmetic expressions in ``x`` and ``y``; see :func:`parse_expression`.
"""

from __future__ import annotations

import ast
import json
import math
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidProblemError
from .grid import Domain, Grid


@dataclass(frozen=True)
class PointMass:
    x: float
    y: float
    mass: float


@dataclass(frozen=True)
class Problem:
    name: str
    domain: Domain
    f: Callable | None
    g: Callable
    exact: Callable | None = None
    point_mass: PointMass | None = None

    def __post_init__(self):
        if (self.f is None) == (self.point_mass is None):
            raise InvalidProblemError("a problem needs exactly one of f or point_mass")


def _radius(x, y):
    return np.hypot(x, y)


def _ex1_exact(x, y):
    return np.exp((x * x + y * y) / 2)


def _ex1_f(x, y):
    r2 = x * x + y * y
    return (1 + r2) * np.exp(r2)


def _ex2_exact(x, y):
    return -np.sqrt(2 - x * x - y * y)


def _ex2_f(x, y):
    return 2 / (2 - x * x - y * y) ** 2


def _ex3_exact(x, y):
    return 0.5 * np.maximum(_radius(x, y) - 0.1, 0.0) ** 2


def _ex3_f(x, y):
    r = _radius(x, y)
    with np.errstate(divide="ignore"):
        return np.maximum(1 - 0.1 / r, 0.0)


def _ex4_exact(x, y):
    return _radius(x, y)


def _one(x, y):
    return np.ones(np.broadcast(x, y).shape)


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


BUILTINS = ("ex1", "ex2", "ex3", "ex4", "ex5")


def builtin(name: str) -> Problem:
    """One of the five benchmark problems ``ex1`` .. ``ex5``."""
    if name == "ex1":
        return Problem("ex1", Domain.square(-1.0, 1.0), _ex1_f, _ex1_exact, _ex1_exact)
    if name == "ex2":
        return Problem("ex2", Domain.square(0.0, 1.0), _ex2_f, _ex2_exact, _ex2_exact)
    if name == "ex3":
        return Problem("ex3", Domain.square(-0.5, 0.5), _ex3_f, _ex3_exact, _ex3_exact)
    if name == "ex4":
        return Problem("ex4", Domain.square(-0.5, 0.5), None, _ex4_exact, _ex4_exact, PointMass(0.0, 0.0, math.pi))
    if name == "ex5":
        return Problem("ex5", Domain.square(-0.5, 0.5), _one, _zero, None)
    raise InvalidProblemError(f"unknown problem {name!r}; expected one of {', '.join(BUILTINS)}")


def _point_mass_samples(pm: PointMass, grid: Grid) -> np.ndarray:
    X, Y = grid.mesh()
    d = np.hypot(X - pm.x, Y - pm.y)
    nearest = d <= d.min() * (1 + 1e-9) + 1e-14
    out = np.zeros(grid.shape)
    # ties (mass between nodes) share the mass evenly
    out[nearest] = pm.mass / (grid.h**2 * nearest.sum())
    return out


def sample_f_grid(problem: Problem, grid: Grid) -> np.ndarray:
    """``f`` at every interior node, shape ``(n, n)``."""
    if problem.point_mass is not None:
        return _point_mass_samples(problem.point_mass, grid)
    X, Y = grid.mesh()
    vals = np.broadcast_to(np.asarray(problem.f(X, Y), dtype=float), X.shape).copy()
    if not np.all(np.isfinite(vals)):
        raise InvalidProblemError(f"{problem.name}: f is not finite at some grid point")
    if np.any(vals < 0):
        raise InvalidProblemError(f"{problem.name}: f is negative at some grid point")
    return vals


def sample_f(problem: Problem, grid: Grid, i: int, j: int) -> float:
    """``f`` at interior node ``(i, j)`` (1-based)."""
    grid.index(i, j)
    if problem.point_mass is not None:
        return float(_point_mass_samples(problem.point_mass, grid)[i - 1, j - 1])
    x, y = grid.point(i, j)
    val = float(problem.f(np.float64(x), np.float64(y)))
    if not math.isfinite(val) or val < 0:
        raise InvalidProblemError(f"{problem.name}: f({x}, {y}) = {val} is not a valid source value")
    return val


# ---------------------------------------------------------------------------
# custom problems

_FUNCTIONS = {"sqrt": np.sqrt, "exp": np.exp, "max": np.maximum, "abs": np.abs}
_ALLOWED = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


def parse_expression(text: str) -> Callable:
    """Compile an arithmetic expression in ``x`` and ``y`` to a vectorised function.

    Grammar: numbers, ``x``, ``y``, ``pi``, ``+ - * / ^`` (``^`` is power),
    parentheses and the functions ``sqrt``, ``exp``, ``max`` (two arguments)
    and ``abs``.
    """
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise InvalidProblemError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise InvalidProblemError(f"expression {text!r}: {type(node).__name__} is not allowed")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise InvalidProblemError(f"expression {text!r}: only numeric constants are allowed")
        if isinstance(node, ast.Name) and node.id not in ("x", "y", "pi", *_FUNCTIONS):
            raise InvalidProblemError(f"expression {text!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS or node.keywords:
                raise InvalidProblemError(f"expression {text!r}: unsupported call")
            want = 2 if node.func.id == "max" else 1
            if len(node.args) != want:
                raise InvalidProblemError(f"expression {text!r}: {node.func.id} takes {want} argument(s)")
    code = compile(tree, "<expression>", "eval")

    def fn(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        env = {"__builtins__": {}, "x": x, "y": y, "pi": math.pi, **_FUNCTIONS}
        with np.errstate(divide="ignore", invalid="ignore"):
            out = eval(code, env)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape)

    fn.expression = text
    return fn


def problem_from_dict(spec: dict) -> Problem:
    """Build a problem from a decoded JSON definition.

    Keys: ``name``, ``domain`` (``[x_min, x_max, y_min, y_max]``), ``f`` or
    ``point_mass`` (``{"x", "y", "mass"}``), ``g`` and/or ``exact``. When
    ``g`` is missing the exact solution supplies the boundary data.
    """
    try:
        name = str(spec.get("name", "custom"))
        x0, x1, y0, y1 = (float(v) for v in spec["domain"])
    except (KeyError, TypeError, ValueError):
        raise InvalidProblemError("problem definition needs 'domain': [x_min, x_max, y_min, y_max]") from None
    domain = Domain(x0, x1, y0, y1)
    exact = parse_expression(spec["exact"]) if "exact" in spec else None
    if "g" in spec:
        g = parse_expression(spec["g"])
    elif exact is not None:
        g = exact
    else:
        raise InvalidProblemError("problem definition needs 'g' or 'exact'")
    f = parse_expression(spec["f"]) if "f" in spec else None
    pm = None
    if "point_mass" in spec:
        try:
            pm = PointMass(float(spec["point_mass"]["x"]), float(spec["point_mass"]["y"]), float(spec["point_mass"]["mass"]))
        except (KeyError, TypeError, ValueError):
            raise InvalidProblemError("point_mass needs numeric 'x', 'y' and 'mass'") from None
        if pm.mass < 0:
            raise InvalidProblemError("point mass must be nonnegative")
    return Problem(name, domain, f, g, exact, pm)


def load_problem(path) -> Problem:
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidProblemError(f"cannot read problem file {path}: {exc}") from None
    if not isinstance(spec, dict):
        raise InvalidProblemError("problem file must contain a JSON object")
    return problem_from_dict(spec)
