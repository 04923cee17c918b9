"""
Error norms, convergence rates and the structural checks used by the tests.

The discrete L2 norm is area weighted, ``sqrt(h^2 * sum(e^2))``, so it
approximates the continuous L2 norm on the domain rather than an RMS value.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .controls import ControlPair, Mode, coefficients
from .discretization import GridFunction, arm_length, assemble_system, rotated_axes
from .errors import ConfigurationError
from .grid import Domain, Grid, grid_for_resolution, ray_exit_many
from .problems import Problem, sample_f_grid

NORM_CONVENTION = "area-weighted-l2"


@dataclass(frozen=True)
class ErrorNorms:
    l2: float
    linf: float


def error_norms(u: GridFunction, exact: Callable) -> ErrorNorms:
    """Area-weighted L2 and max errors over the interior nodes."""
    X, Y = u.grid.mesh()
    e = u.values - np.broadcast_to(np.asarray(exact(X, Y), dtype=float), X.shape)
    return ErrorNorms(float(math.sqrt(u.grid.h**2 * np.sum(e * e))), float(np.max(np.abs(e), initial=0.0)))


@dataclass(frozen=True)
class RateRow:
    n: int
    l2: float
    rate2: float | None
    linf: float
    rate_inf: float | None
    iterations: int | None = None


@dataclass(frozen=True)
class RateTable:
    rows: tuple[RateRow, ...]

    def rates(self, norm: str = "l2") -> list[float]:
        key = "rate2" if norm == "l2" else "rate_inf"
        return [getattr(r, key) for r in self.rows[1:]]


def _rate(coarse: float, fine: float) -> float:
    if coarse > 0 and fine > 0:
        return math.log2(coarse / fine)
    return math.nan


def convergence_rates(errors: Sequence) -> RateTable:
    """Observed orders ``log2(e(n/2) / e(n))`` for a doubling sequence of resolutions.

    ``errors`` holds ``(n, ErrorNorms)`` or ``(n, ErrorNorms, iterations)``.
    """
    rows = []
    prev = None
    for entry in errors:
        n, norms = int(entry[0]), entry[1]
        its = entry[2] if len(entry) > 2 else None
        if prev is None:
            rows.append(RateRow(n, norms.l2, None, norms.linf, None, its))
        else:
            if n != 2 * prev[0]:
                raise ConfigurationError(f"resolutions must double: {prev[0]} is followed by {n}")
            rows.append(RateRow(n, norms.l2, _rate(prev[1].l2, norms.l2), norms.linf, _rate(prev[1].linf, norms.linf), its))
        prev = (n, norms)
    return RateTable(tuple(rows))


@dataclass(frozen=True)
class ConvexityResult:
    min_direc_second_diff: float
    convex: bool


def convexity_check(u: GridFunction, tol: float = 1e-8) -> ConvexityResult:
    """Smallest axis or diagonal central second difference over the interior nodes."""
    full = u.full()
    h2 = u.grid.h ** 2
    c = full[1:-1, 1:-1]
    diffs = (
        (full[2:, 1:-1] - 2 * c + full[:-2, 1:-1]) / h2,
        (full[1:-1, 2:] - 2 * c + full[1:-1, :-2]) / h2,
        (full[2:, 2:] - 2 * c + full[:-2, :-2]) / (2 * h2),
        (full[:-2, 2:] - 2 * c + full[2:, :-2]) / (2 * h2),
    )
    low = float(min(d.min() for d in diffs))
    return ConvexityResult(low, low >= -tol)


# ---------------------------------------------------------------------------
# consistency probe


@dataclass(frozen=True)
class SmoothFunction:
    """A test function together with its analytic Hessian ``(fxx, fxy, fyy)``."""

    value: Callable
    hessian: Callable


def _exp_radial(x, y):
    return np.exp((x * x + y * y) / 2)


def _exp_radial_hessian(x, y):
    p = _exp_radial(x, y)
    return (1 + x * x) * p, x * y * p, (1 + y * y) * p


EXP_RADIAL = SmoothFunction(_exp_radial, _exp_radial_hessian)

PROBE_DOMAIN = Domain.square(-1.0, 1.0)
PROBE_STEPS = (1 / 32, 1 / 64, 1 / 128, 1 / 256)


@dataclass(frozen=True)
class ProbeResult:
    hs: tuple[float, ...]
    errors: tuple[float, ...]
    order: float


def _operator_error(phi: SmoothFunction, grid: Grid, mode: Mode, theta: float, a: float) -> np.ndarray:
    """``|L_h phi - L phi|`` at every interior node, all rows using one mode and control."""
    size = grid.size
    system = assemble_system(
        grid, phi.value, np.zeros(size), np.full(size, a), np.full(size, theta), np.full(size, Mode(mode), dtype=np.int8)
    )
    X, Y = grid.mesh()
    discrete = system.residual(phi.value(X, Y).ravel())
    fxx, fxy, fyy = phi.hessian(X.ravel(), Y.ravel())
    co = coefficients(ControlPair(a, theta))
    return np.abs(discrete - (-co.a11 * fxx - 2 * co.a12 * fxy - co.a22 * fyy))


def truncated_nodes(grid: Grid, theta: float) -> np.ndarray:
    """Flat indices of nodes whose wide stencil at ``theta`` has an arm cut by the boundary."""
    X, Y = grid.mesh()
    (zx, zy), (wx, wy) = rotated_axes(theta)
    cut = np.zeros(grid.size, dtype=bool)
    for dx, dy in ((zx, zy), (-zx, -zy), (wx, wy), (-wx, -wy)):
        cut |= ray_exit_many(grid.domain, X.ravel(), Y.ravel(), dx, dy, arm_length(grid))[3]
    return np.flatnonzero(cut)


def truncation_error(
    phi: SmoothFunction,
    grid: Grid,
    mode: Mode,
    theta: float,
    a: float = 0.3,
    where: str = "interior",
    point=(0.25, 0.125),
) -> float:
    """Local truncation error of the assembled rows for the control ``(a, theta)``.

    ``"interior"`` measures it at the node ``point``; ``"truncated"`` takes
    the maximum over all nodes whose wide stencil has a cut arm.
    """
    err = _operator_error(phi, grid, mode, theta, a)
    if where == "truncated":
        nodes = truncated_nodes(grid, theta)
        if nodes.size == 0:
            raise ConfigurationError("no node has a truncated arm at this angle")
        return float(err[nodes].max())
    i = int(round((point[0] - grid.domain.x_min) / grid.h))
    j = int(round((point[1] - grid.domain.y_min) / grid.h))
    return float(err[grid.index(i, j)])


def consistency_probe(
    phi: SmoothFunction = EXP_RADIAL,
    mode: Mode = Mode.SEVEN_POINT_1,
    theta: float = math.pi / 8,
    hs: Sequence[float] = PROBE_STEPS,
    a: float = 0.3,
    where: str = "interior",
    domain: Domain = PROBE_DOMAIN,
) -> ProbeResult:
    """Observed local truncation order of one stencil family.

    Each ``h`` in ``hs`` must divide the domain width. ``where`` is
    ``"interior"`` (a fixed node away from the boundary) or ``"truncated"``
    (the worst node whose wide-stencil arms are cut; a fixed point cannot stay
    within ``sqrt(h)`` of the boundary as ``h`` shrinks). The order is the
    least-squares slope of ``log(error)`` against ``log(h)``.
    """
    if len(hs) < 2:
        raise ConfigurationError("consistency probe needs at least two grid levels")
    if where not in ("interior", "truncated"):
        raise ConfigurationError(f"unknown probe location {where!r}")
    errs = []
    for h in hs:
        cells = domain.width / h
        if abs(cells - round(cells)) > 1e-9:
            raise ConfigurationError(f"h={h} does not divide the domain width")
        grid = grid_for_resolution(domain, int(round(cells)))
        errs.append(truncation_error(phi, grid, mode, theta, a, where))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return ProbeResult(tuple(float(h) for h in hs), tuple(errs), float(slope))


# ---------------------------------------------------------------------------
# stability bound


@dataclass(frozen=True)
class StabilityResult:
    applicable: bool
    bound: float
    sup_norm: float

    @property
    def passed(self) -> bool:
        return (not self.applicable) or self.sup_norm <= self.bound * (1 + 1e-12)


def stability_bound(problem: Problem, grid: Grid) -> float:
    """``max sqrt(f) * R^2 / 2 + max |g|``, with ``R`` the largest distance to the origin.

    ``f`` is taken at the nodes the solver used; ``g`` is sampled densely
    along the boundary.
    """
    f = sample_f_grid(problem, grid)
    bx, by = problem.domain.boundary_samples()
    g_max = float(np.max(np.abs(problem.g(bx, by))))
    R = problem.domain.max_radius()
    return 0.5 * float(np.sqrt(f.max(initial=0.0))) * R * R + g_max


def stability_check(u: GridFunction, problem: Problem) -> StabilityResult:
    """Check the a-priori sup-norm bound on a converged discrete solution.

    Not applicable to point-mass sources, whose sampled ``f`` grows like
    ``1/h^2``.
    """
    sup = float(np.max(np.abs(u.full())))
    if problem.point_mass is not None:
        return StabilityResult(False, math.inf, sup)
    return StabilityResult(True, stability_bound(problem, u.grid), sup)
