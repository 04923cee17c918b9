"""
Command-line front end.

    monge-hjb solve --problem ex1 --n 32,64,128 --scheme mixed
    monge-hjb solve --problem ex5 --n 64 --dump-solution
    monge-hjb solve --problem-file my_problem.json --n 64

``--n`` is the number of cells per axis (``h = width / n``). Each run writes
``<problem>_<scheme>.json`` to the output directory (``--output-dir``, else
``$MONGE_HJB_OUTPUT_DIR``, else the working directory) and, with
``--dump-solution``, one ``x,y,u`` CSV per resolution.

Exit codes: 0 success, 2 bad configuration or problem, 3 solver failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import NORM_CONVENTION, convergence_rates, error_norms
from .errors import ConfigurationError, InvalidProblemError, MongeHJBError, NonConvergenceError, SolverError
from .grid import grid_for_resolution
from .nonmonotone import SEEDS, solve_nonmonotone
from .problems import BUILTINS, Problem, builtin, load_problem
from .solver import LINEAR_METHODS, Scheme, policy_iteration

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

OUTPUT_ENV = "MONGE_HJB_OUTPUT_DIR"
SCHEMES = ("mixed", "wide", "nonmonotone")


@dataclass(frozen=True)
class RunConfig:
    problem: Problem
    resolutions: tuple[int, ...]
    scheme: str = "mixed"
    tol: float = 1e-6
    max_iter: int = 100
    M: int | None = None
    output_dir: Path = Path(".")
    dump_solution: bool = False
    linear_solver: str = "auto"
    seed: str = "concave"

    def __post_init__(self):
        if not self.resolutions:
            raise ConfigurationError("no resolutions given")
        for n in self.resolutions:
            if n < 3:
                raise ConfigurationError(f"resolution must be at least 3 cells, got {n}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not self.tol > 0:
            raise ConfigurationError("tolerance must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max-iter must be positive")
        if self.M is not None and self.M < 1:
            raise ConfigurationError("M must be positive")


def _parse_resolutions(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"--n expects comma-separated integers, got {text!r}") from None


def _doubling(ns) -> bool:
    return len(ns) > 1 and all(b == 2 * a for a, b in zip(ns, ns[1:]))


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def solution_csv(u) -> str:
    X, Y = u.grid.mesh()
    lines = ["x,y,u"]
    for x, y, v in zip(X.ravel(), Y.ravel(), u.values.ravel()):
        lines.append(f"{x:.17g},{y:.17g},{v:.17g}")
    return "\n".join(lines) + "\n"


def _centre_value(u) -> float | None:
    """Value at the domain centre if it is a grid node."""
    d = u.grid.domain
    i = (0.5 * (d.x_min + d.x_max) - d.x_min) / u.grid.h
    j = (0.5 * (d.y_min + d.y_max) - d.y_min) / u.grid.h
    if abs(i - round(i)) > 1e-9 or abs(j - round(j)) > 1e-9:
        return None
    return float(u.values[int(round(i)) - 1, int(round(j)) - 1])


def _solve_one(config: RunConfig, n: int):
    grid = grid_for_resolution(config.problem.domain, n)
    if config.scheme == "nonmonotone":
        u, rep = solve_nonmonotone(config.problem, grid, tol=config.tol, max_iter=config.max_iter, seed_kind=config.seed)
        return u, rep.iterations, 0
    scheme = Scheme.MIXED if config.scheme == "mixed" else Scheme.PURE_WIDE
    u, _, rep = policy_iteration(
        config.problem,
        grid,
        tol=config.tol,
        max_iter=config.max_iter,
        scheme=scheme,
        M=config.M,
        linear_solver=config.linear_solver,
    )
    return u, rep.iterations, rep.wide_point_count


def run(config: RunConfig, out=None) -> dict:
    """Solve at every resolution, write the report (and dumps), return the report dict."""
    out = out if out is not None else sys.stdout
    problem = config.problem
    rows, norms, timings = [], [], []
    for n in config.resolutions:
        start = time.perf_counter()
        u, iterations, wide = _solve_one(config, n)
        elapsed = (time.perf_counter() - start) * 1e3
        timings.append(elapsed)
        row = {
            "n": n,
            "h": u.grid.h,
            "l2": None,
            "rate2": None,
            "linf": None,
            "rate_inf": None,
            "policy_iterations": iterations,
            "wide_point_count": wide,
            "runtime_ms": round(elapsed, 3),
            "u_centre": _centre_value(u),
            "u_min": float(u.values.min()),
            "u_max": float(u.values.max()),
        }
        if problem.exact is not None:
            e = error_norms(u, problem.exact)
            row["l2"], row["linf"] = e.l2, e.linf
            norms.append((n, e))
        rows.append(row)
        if config.dump_solution:
            _write_atomic(config.output_dir / f"{problem.name}_{config.scheme}_n{n}.csv", solution_csv(u))
    if norms and _doubling([n for n, _ in norms]):
        table = convergence_rates(norms)
        for row, rate in zip(rows, table.rows):
            row["rate2"], row["rate_inf"] = rate.rate2, rate.rate_inf
    report = {
        "problem": problem.name,
        "scheme": config.scheme,
        "M": config.M if config.M is not None else "n",
        "tol": config.tol,
        "rows": rows,
        "norm_convention": NORM_CONVENTION,
        "metadata": {
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    _write_atomic(config.output_dir / f"{problem.name}_{config.scheme}.json", json.dumps(report, indent=2) + "\n")
    _print_table(rows, out)
    return report


def _fmt(v, spec):
    width = int(spec.split(".")[0])
    return f"{'-':>{width}}" if v is None else format(v, spec)


def _print_table(rows, out) -> None:
    print(f"{'n':>6} {'l2':>11} {'rate':>6} {'linf':>11} {'rate':>6} {'its':>4} {'wide':>6} {'u_centre':>12}", file=out)
    for r in rows:
        print(
            f"{r['n']:>6} {_fmt(r['l2'], '11.4e')} {_fmt(r['rate2'], '6.2f')} {_fmt(r['linf'], '11.4e')} "
            f"{_fmt(r['rate_inf'], '6.2f')} {r['policy_iterations']:>4} {r['wide_point_count']:>6} "
            f"{_fmt(r['u_centre'], '12.6f')}",
            file=out,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monge-hjb", description="Monotone HJB solver for the 2D Monge-Ampere Dirichlet problem.")
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="solve one problem at one or more resolutions")
    which = solve.add_mutually_exclusive_group(required=True)
    which.add_argument("--problem", choices=BUILTINS, help="built-in benchmark problem")
    which.add_argument("--problem-file", type=Path, help="JSON problem definition")
    solve.add_argument("--n", required=True, help="cells per axis, comma separated for a sweep (e.g. 32,64,128)")
    solve.add_argument("--scheme", choices=SCHEMES, default="mixed")
    solve.add_argument("--tol", type=float, default=1e-6)
    solve.add_argument("--max-iter", type=int, default=100)
    solve.add_argument("--M", type=int, default=None, help="sampled angles for the wide stencil (default: n)")
    solve.add_argument("--output-dir", type=Path, default=None, help=f"default: ${OUTPUT_ENV} or the working directory")
    solve.add_argument("--dump-solution", action="store_true", help="write x,y,u CSV files")
    solve.add_argument("--linear-solver", choices=LINEAR_METHODS, default="auto")
    solve.add_argument("--seed", choices=SEEDS, default="concave", help="Newton start for --scheme nonmonotone")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        problem = builtin(args.problem) if args.problem else load_problem(args.problem_file)
        output_dir = args.output_dir or Path(os.environ.get(OUTPUT_ENV, "."))
        config = RunConfig(
            problem=problem,
            resolutions=_parse_resolutions(args.n),
            scheme=args.scheme,
            tol=args.tol,
            max_iter=args.max_iter,
            M=args.M,
            output_dir=output_dir,
            dump_solution=args.dump_solution,
            linear_solver=args.linear_solver,
            seed=args.seed,
        )
    except (ConfigurationError, InvalidProblemError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run(config)
    except (ConfigurationError, InvalidProblemError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, SolverError, MongeHJBError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
