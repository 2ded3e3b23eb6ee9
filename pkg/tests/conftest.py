import pytest

from netsim import scenarios
from netsim.core import parse_scenario


@pytest.fixture(scope="session")
def three_cell():
    return parse_scenario(scenarios.three_cell_doc())


@pytest.fixture(scope="session")
def two_cell():
    return parse_scenario(scenarios.two_cell_doc())


@pytest.fixture
def three_cell_doc():
    return scenarios.three_cell_doc()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("] ")[1].split(".")[0])):
        terminalreporter.write_line(line)
