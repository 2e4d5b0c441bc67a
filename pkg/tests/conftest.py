import numpy as np
import pytest

from crmgrasp.crm import default_machine
from crmgrasp.harness.suites import cylinder_lift_task, desk_suite


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def machine():
    return default_machine()


@pytest.fixture
def desk_tasks():
    return desk_suite()


@pytest.fixture
def cylinder_task():
    return cylinder_lift_task()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
