import functools

import pytest

from monge_hjb import builtin, grid_for_resolution, policy_iteration, verify_m_matrix
from monge_hjb.solver import Scheme

# one line per acceptance criterion, echoed at the end of the run
CRITERIA_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    print(line)


class Solved:
    """Converged solve plus what was seen of every assembled system."""

    def __init__(self, name, scheme, n):
        self.problem = builtin(name)
        self.grid = grid_for_resolution(self.problem.domain, n)
        self.m_checks = []
        self.u, self.controls, self.report = policy_iteration(
            self.problem,
            self.grid,
            scheme=scheme,
            max_iter=200,
            on_system=lambda s: self.m_checks.append(verify_m_matrix(s)),
        )

    @property
    def all_m_matrices(self) -> bool:
        return bool(self.m_checks) and all(c.ok for c in self.m_checks)


@functools.lru_cache(maxsize=None)
def solved(name: str, scheme: Scheme, n: int) -> Solved:
    return Solved(name, scheme, n)


@pytest.fixture(scope="session")
def solve():
    return solved


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
