import math
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES = []


def record(number: int, name: str, passed: bool, detail: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append((number, line))
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corner_run():
    """The 513^2 demonstration solve plus the full corner pipeline, timed separately."""
    from corner_ma.pipeline import PipelineSettings, run_corner_pipeline
    from corner_ma.solver import ProblemSpec, solve_dirichlet

    settings = PipelineSettings(c=math.sin(0.3 * math.pi) ** 2, n=513, grading=1.05)
    t0 = time.perf_counter()
    sol = solve_dirichlet(ProblemSpec(f=settings.c, n=settings.n, grading=settings.grading,
                                      max_stretch=settings.max_stretch), tol=settings.tol)
    t1 = time.perf_counter()
    result = run_corner_pipeline(settings, solution=sol)
    t2 = time.perf_counter()
    return {"result": result, "solve_seconds": t1 - t0, "pipeline_seconds": t2 - t0}
