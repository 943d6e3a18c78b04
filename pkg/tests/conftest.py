import os

import pytest
from hypothesis import HealthCheck, settings

from slod.fem import ProblemSpec
from slod.grid import FineGrid, build_cartesian_mesh
from slod.solver import HelmholtzProblem

settings.register_profile(
    "slod",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "slod"))

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_problem(d=2, n_coarse=8, n_fine=64, kappa=8.0, **spec_kw):
    mesh = build_cartesian_mesh(d, n_coarse)
    return HelmholtzProblem(FineGrid(mesh, n_fine), ProblemSpec(kappa, **spec_kw))


@pytest.fixture
def small_problem():
    return make_problem()

