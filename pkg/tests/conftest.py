import pytest

from cpwlsa.cpwl import FunctionId, build_segment_table
from cpwlsa.fabric import SystolicConfig
from cpwlsa.rng import make_rng


@pytest.fixture
def rng(request):
    return make_rng(0, request.node.name)


@pytest.fixture(scope="session")
def gelu_table():
    return build_segment_table(FunctionId.GELU, 0.25, -8.0, 8.0)


@pytest.fixture
def cfg():
    return SystolicConfig()


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
