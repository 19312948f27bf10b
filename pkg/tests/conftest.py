import pytest

from plapcont.continuation import trace_branch
from plapcont.discretization import Mesh1D
from plapcont.eigen import first_eigenpair
from plapcont.problem import ProblemSpec

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def ref_mesh():
    return Mesh1D(400, 1.0, "graded")


@pytest.fixture(scope="session")
def ref_spec():
    return ProblemSpec(p=2.0, q=3.0, delta=0.5, eps=0.0)


@pytest.fixture(scope="session")
def eig2(ref_mesh):
    return first_eigenpair(ref_mesh, 2.0)


@pytest.fixture(scope="session")
def ref_branch(ref_spec, ref_mesh):
    return trace_branch(ref_spec, mesh=ref_mesh)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
