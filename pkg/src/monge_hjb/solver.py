"""
Policy iteration for the discrete HJB system.

Each sweep freezes the iterate, picks the best control at every node (which
also yields the residual), then freezes those controls and solves the linear
system they define. The loop starts from the Poisson problem
``u_xx + u_yy = 2 sqrt(f)``, which is the HJB operator with ``a = 1/2``.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse.linalg as spla

from .controls import TIE_TOL, ControlPair, G3Rule, Mode, OptimizerResult, Region, mode_of, optimize_controls
from .discretization import (
    AssembledSystem,
    GridFunction,
    WideStencilCache,
    assemble_system,
    narrow_diffs,
    verify_m_matrix,
)
from .errors import ConfigurationError, NonConvergenceError, SolverError
from .grid import Grid
from .problems import Problem, sample_f_grid

LINEAR_RTOL = 1e-10


class Scheme(enum.Enum):
    MIXED = "mixed"
    PURE_WIDE = "wide"


@dataclass
class ControlField:
    """Optimal controls at every interior node, ``(n, n)`` arrays."""

    a: np.ndarray
    theta: np.ndarray
    objective: np.ndarray
    region: np.ndarray

    @property
    def mode(self) -> np.ndarray:
        return mode_of(self.region)

    def at(self, i: int, j: int) -> OptimizerResult:
        k = (i - 1, j - 1)
        return OptimizerResult(
            ControlPair(float(self.a[k]), float(self.theta[k])), float(self.objective[k]), Region(int(self.region[k]))
        )

    def census(self) -> dict[str, int]:
        modes = self.mode
        return {m.name: int(np.count_nonzero(modes == m)) for m in Mode}

    def keep_incumbent(self, incumbent: ControlField, incumbent_objective: np.ndarray) -> ControlField:
        """Replace this field by ``incumbent`` wherever the new candidate is not strictly better."""
        inc = np.asarray(incumbent_objective, dtype=float).reshape(self.a.shape)
        keep = ~(self.objective > inc + TIE_TOL * np.maximum(1.0, np.abs(inc)))
        return ControlField(
            np.where(keep, incumbent.a, self.a),
            np.where(keep, incumbent.theta, self.theta),
            np.where(keep, inc, self.objective),
            np.where(keep, incumbent.region, self.region).astype(self.region.dtype),
        )


@dataclass
class SolveReport:
    iterations: int = 0
    initial_residual: float = float("nan")
    residual_history: list[float] = field(default_factory=list)
    census: list[dict[str, int]] = field(default_factory=list)
    linear_solves: list[dict] = field(default_factory=list)
    converged: bool = False
    m_matrix_ok: bool = True
    runtime_s: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else self.initial_residual

    @property
    def wide_point_count(self) -> int:
        return self.census[-1]["WIDE"] if self.census else 0


#: Systems up to this many unknowns use sparse LU under ``"auto"``.
AUTO_DIRECT_MAX = 4096

LINEAR_METHODS = ("auto", "direct", "gmres", "amg")


def _relative_residual(A, u, F) -> float:
    norm_f = np.linalg.norm(F)
    return float(np.linalg.norm(A @ u - F) / (norm_f if norm_f > 0 else 1.0))


def _solve_once(A, F, method: str) -> np.ndarray:
    if method == "direct":
        return spla.splu(A.tocsc()).solve(F)
    if method == "gmres":
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20)
        prec = spla.LinearOperator(A.shape, ilu.solve)
        u, code = spla.gmres(A, F, M=prec, rtol=LINEAR_RTOL * 0.1, atol=0.0, restart=100, maxiter=200)
        if code != 0:
            raise SolverError(f"GMRES did not converge (info={code})")
        return u
    if method == "amg":
        # AIR targets nonsymmetric M-matrices; scipy's GMRES tracks the true residual
        ml = pyamg.air_solver(A.tocsr())
        u, code = spla.gmres(
            A, F, M=ml.aspreconditioner(), rtol=LINEAR_RTOL * 0.1, atol=0.0, restart=50, maxiter=20
        )
        if code != 0:
            raise SolverError(f"AMG-preconditioned GMRES did not converge (info={code})")
        return u
    raise ConfigurationError(f"unknown linear solver {method!r}; expected one of {', '.join(LINEAR_METHODS)}")


def solve_linear(system: AssembledSystem, method: str = "auto") -> np.ndarray:
    """Solve ``A u = F`` to relative residual ``LINEAR_RTOL``.

    ``method`` is ``"direct"`` (sparse LU), ``"gmres"`` (ILU-preconditioned),
    ``"amg"`` (algebraic multigrid accelerated by GMRES) or ``"auto"``, which
    uses LU for small systems and AMG otherwise, falling back to LU if AMG
    misses the tolerance.
    """
    if method not in LINEAR_METHODS:
        raise ConfigurationError(f"unknown linear solver {method!r}; expected one of {', '.join(LINEAR_METHODS)}")
    A, F = system.matrix, system.rhs
    if method == "auto":
        chosen = "direct" if A.shape[0] <= AUTO_DIRECT_MAX else "amg"
    else:
        chosen = method
    try:
        try:
            u = _solve_once(A, F, chosen)
            rel = _relative_residual(A, u, F)
        except SolverError:
            if method != "auto":
                raise
            rel = np.inf
        if method == "auto" and chosen == "amg" and not rel <= LINEAR_RTOL:
            u = _solve_once(A, F, "direct")
            rel = _relative_residual(A, u, F)
    except RuntimeError as exc:
        if isinstance(exc, SolverError):
            raise
        raise SolverError(f"linear solve failed: {exc}") from exc
    if not rel <= LINEAR_RTOL:
        raise SolverError(f"linear solve residual {rel:.3e} above {LINEAR_RTOL:.0e}")
    return u


def _poisson_system(problem: Problem, grid: Grid, f: np.ndarray) -> AssembledSystem:
    size = grid.size
    return assemble_system(
        grid, problem.g, f, np.full(size, 0.5), np.zeros(size), np.full(size, Mode.SEVEN_POINT_1, dtype=np.int8)
    )


def initial_guess(problem: Problem, grid: Grid, linear_solver: str = "auto", f: np.ndarray | None = None) -> GridFunction:
    """Discrete Poisson solution of ``u_xx + u_yy = 2 sqrt(f)``, ``u = g`` on the boundary."""
    if f is None:
        f = sample_f_grid(problem, grid)
    u = solve_linear(_poisson_system(problem, grid, f), linear_solver)
    return GridFunction(grid, u.reshape(grid.shape), problem.g)


def default_M(grid: Grid) -> int:
    """Number of sampled angles: the number of cells per axis."""
    return grid.n + 1


class PolicyStep:
    """Control optimisation against frozen iterates of one problem on one grid.

    Holds the sampled source and the cached wide-stencil geometry so repeated
    sweeps do not redo that work.
    """

    def __init__(
        self,
        problem: Problem,
        grid: Grid,
        M: int | None = None,
        scheme: Scheme = Scheme.MIXED,
        f=None,
        g3_rule: G3Rule = G3Rule.STRICT,
    ):
        self.problem = problem
        self.grid = grid
        self.M = default_M(grid) if M is None else int(M)
        if self.M < 1:
            raise ConfigurationError(f"M must be >= 1, got {M!r}")
        self.scheme = Scheme(scheme)
        self.g3_rule = G3Rule(g3_rule)
        self.f = sample_f_grid(problem, grid) if f is None else np.asarray(f, dtype=float)
        self.cache = WideStencilCache(grid, problem.g, self.M)

    def __call__(self, u: GridFunction):
        full = u.full()
        dxx, dyy, dxy1, dxy2 = (d.ravel() for d in narrow_diffs(full, self.grid.h))
        wide_eval = self.cache.evaluator(full)
        out = optimize_controls(
            dxx,
            dyy,
            dxy1,
            dxy2,
            self.f.ravel(),
            wide_eval,
            self.M,
            pure_wide=self.scheme is Scheme.PURE_WIDE,
            g3_rule=self.g3_rule,
        )
        shape = self.grid.shape
        controls = ControlField(
            out.a.reshape(shape), out.theta.reshape(shape), out.objective.reshape(shape), out.region.reshape(shape)
        )
        return controls, out.objective.copy()

    def assemble(self, controls: ControlField) -> AssembledSystem:
        return assemble_system(self.grid, self.problem.g, self.f, controls.a, controls.theta, controls.mode)


def residual_and_policy(u: GridFunction, problem: Problem, grid: Grid, M: int | None = None, scheme: Scheme = Scheme.MIXED):
    """Best controls at every node and the residual (the maximised operator value)."""
    return PolicyStep(problem, grid, M, scheme)(u)


def policy_iteration(
    problem: Problem,
    grid: Grid,
    tol: float = 1e-6,
    max_iter: int = 100,
    scheme: Scheme = Scheme.MIXED,
    M: int | None = None,
    linear_solver: str = "auto",
    check_m_matrix: bool = False,
    on_system=None,
    g3_rule: G3Rule = G3Rule.STRICT,
):
    """Solve the discrete HJB problem.

    Returns ``(u, controls, report)``. ``report.iterations`` counts linear
    solves after the initial guess. The control in use stays a candidate in
    every sweep, and a node switches only to a strictly better one; this
    keeps the iterates monotone even though the sampled wide-stencil search
    depends on the iterate. With ``check_m_matrix`` every assembled
    system, the initial Poisson one included, is verified; ``on_system``
    (if given) is called with each one.
    ``g3_rule`` selects how the mixed scheme's wide-stencil search handles
    angles whose best weight lies on a region boundary (see ``G3Rule``).
    """
    if not tol > 0:
        raise ConfigurationError("tolerance must be positive")
    if int(max_iter) != max_iter or max_iter < 1:
        raise ConfigurationError("max_iter must be a positive integer")
    start = time.perf_counter()
    step = PolicyStep(problem, grid, M, scheme, g3_rule=g3_rule)
    report = SolveReport()
    shape = grid.shape
    incumbent = None

    def inspect(system):
        if check_m_matrix:
            check = verify_m_matrix(system)
            report.m_matrix_ok &= check.ok
            if not check.ok:
                raise SolverError(f"assembled matrix is not an M-matrix: {check}")
        if on_system is not None:
            on_system(system)

    system = _poisson_system(problem, grid, step.f)
    inspect(system)
    values = solve_linear(system, linear_solver)
    while True:
        u = GridFunction(grid, values.reshape(shape), problem.g)
        # the control in use is always a candidate: its objective is the residual of the system just solved
        controls, _ = step(u)
        if incumbent is not None:
            controls = controls.keep_incumbent(incumbent, system.residual(values))
        res = float(np.max(np.abs(controls.objective)))
        if report.iterations == 0:
            report.initial_residual = res
        else:
            report.residual_history.append(res)
        report.census.append(controls.census())
        if res <= tol:
            break
        if report.iterations >= max_iter:
            report.runtime_s = time.perf_counter() - start
            raise NonConvergenceError(
                f"policy iteration did not reach tol={tol:g} in {max_iter} iterations (residual {res:.3e})", report
            )
        system = step.assemble(controls)
        inspect(system)
        values = solve_linear(system, linear_solver)
        report.iterations += 1
        incumbent = controls
    report.converged = True
    report.runtime_s = time.perf_counter() - start
    return u, controls, report
