"""
Direct central-difference discretization of det(D^2 u) = f.

The equations ``dxx u * dyy u - (dxy u)^2 = f`` use the 5-point second
differences and the 4-point cross difference. The scheme is not monotone and
has several discrete solutions; which one Newton finds depends on the start.
It is kept as a comparison for the monotone solver.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import GridFunction
from .errors import ConfigurationError, NonConvergenceError
from .grid import Grid
from .problems import Problem, sample_f_grid
from .solver import policy_iteration

SEEDS = ("concave", "convex")


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    damping: list[float] = field(default_factory=list)
    converged: bool = False
    seed: str = "concave"
    runtime_s: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else math.nan


class _Operators:
    """Sparse interior parts of the three difference operators and their boundary offsets."""

    def __init__(self, grid: Grid, g):
        n, h2 = grid.n, grid.h**2
        X, Y = grid.full_mesh()
        ring = grid.with_boundary(np.zeros(grid.shape), g)
        self.ops = []
        self.offsets = []
        stencils = (
            ((1, 0, 1.0), (-1, 0, 1.0), (0, 0, -2.0)),
            ((0, 1, 1.0), (0, -1, 1.0), (0, 0, -2.0)),
            ((1, 1, 0.25), (-1, -1, 0.25), (1, -1, -0.25), (-1, 1, -0.25)),
        )
        I, J = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
        rows_all = (n * (I - 1) + (J - 1)).ravel()
        for stencil in stencils:
            rows, cols, vals = [], [], []
            offset = np.zeros(grid.size)
            for di, dj, w in stencil:
                Ii, Jj = (I + di).ravel(), (J + dj).ravel()
                inner = (Ii >= 1) & (Ii <= n) & (Jj >= 1) & (Jj <= n)
                rows.append(rows_all[inner])
                cols.append(n * (Ii[inner] - 1) + (Jj[inner] - 1))
                vals.append(np.full(inner.sum(), w / h2))
                offset[rows_all[~inner]] += w / h2 * ring[Ii[~inner], Jj[~inner]]
            self.ops.append(sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.size, grid.size)))
            self.offsets.append(offset)

    def diffs(self, u: np.ndarray):
        return tuple(D @ u + b for D, b in zip(self.ops, self.offsets))


def nonmonotone_residual(u: GridFunction, f: np.ndarray | None = None, problem: Problem | None = None) -> np.ndarray:
    """``dxx u * dyy u - (dxy u)^2 - f`` at every interior node, shape ``(n, n)``."""
    if f is None:
        if problem is None:
            raise ConfigurationError("need either the sampled f or the problem")
        f = sample_f_grid(problem, u.grid)
    ops = _Operators(u.grid, u.g)
    dxx, dyy, dxy = ops.diffs(u.values.ravel())
    return (dxx * dyy - dxy * dxy - np.ravel(f)).reshape(u.grid.shape)


def seed(problem: Problem, grid: Grid, kind: str = "concave") -> GridFunction:
    """Starting iterate for Newton.

    ``"convex"`` is the monotone scheme's solution. ``"concave"`` is its
    mirror image: the equation is unchanged by ``u -> -u``, so the negated
    monotone solution for boundary data ``-g`` is a concave approximate root
    with the right boundary values.
    """
    if kind not in SEEDS:
        raise ConfigurationError(f"unknown seed {kind!r}; expected one of {', '.join(SEEDS)}")
    if kind == "convex":
        u, _, _ = policy_iteration(problem, grid)
        return u
    flipped = Problem(
        problem.name, problem.domain, problem.f, lambda x, y: -np.asarray(problem.g(x, y), dtype=float), None, problem.point_mass
    )
    u, _, _ = policy_iteration(flipped, grid)
    return GridFunction(grid, -u.values, problem.g)


def solve_nonmonotone(
    problem: Problem,
    grid: Grid,
    tol: float = 1e-9,
    max_iter: int = 50,
    seed_kind: str = "concave",
    u0: GridFunction | None = None,
):
    """Damped Newton on the central-difference equations.

    Steps are halved (down to ``2**-20``) until the max residual decreases.
    Returns ``(u, report)``; raises ``NonConvergenceError`` if the max
    residual does not reach ``tol`` within ``max_iter`` steps.
    """
    if not tol > 0:
        raise ConfigurationError("tolerance must be positive")
    if int(max_iter) != max_iter or max_iter < 1:
        raise ConfigurationError("max_iter must be a positive integer")
    start = time.perf_counter()
    f = sample_f_grid(problem, grid).ravel()
    ops = _Operators(grid, problem.g)
    u = (u0 if u0 is not None else seed(problem, grid, seed_kind)).values.ravel().copy()
    report = NewtonReport(seed="custom" if u0 is not None else seed_kind)

    def residual(v):
        dxx, dyy, dxy = ops.diffs(v)
        return dxx * dyy - dxy * dxy - f, (dxx, dyy, dxy)

    F, (dxx, dyy, dxy) = residual(u)
    res = float(np.max(np.abs(F)))
    report.residual_history.append(res)
    Dxx, Dyy, Dxy = ops.ops
    while res > tol:
        if report.iterations >= max_iter:
            report.runtime_s = time.perf_counter() - start
            raise NonConvergenceError(f"Newton did not reach tol={tol:g} in {max_iter} steps (residual {res:.3e})", report)
        J = sp.diags(dyy) @ Dxx + sp.diags(dxx) @ Dyy - 2 * sp.diags(dxy) @ Dxy
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", spla.MatrixRankWarning)
                step = spla.splu(J.tocsc()).solve(-F)
        except RuntimeError:
            step = np.full_like(F, np.nan)
        if not np.all(np.isfinite(step)):
            report.runtime_s = time.perf_counter() - start
            raise NonConvergenceError("singular Newton Jacobian", report)
        lam = 1.0
        while True:
            trial = u + lam * step
            F_new, d_new = residual(trial)
            new = float(np.max(np.abs(F_new)))
            if new < res or lam <= 2.0**-20:
                break
            lam *= 0.5
        u, F, (dxx, dyy, dxy), res = trial, F_new, d_new, new
        report.iterations += 1
        report.damping.append(lam)
        report.residual_history.append(res)
    report.converged = True
    report.runtime_s = time.perf_counter() - start
    return GridFunction(grid, u.reshape(grid.shape), problem.g), report
