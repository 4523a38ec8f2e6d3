import pytest

from fastrevert.model import CoefficientModel, observable_from_name, reversion_from_name


@pytest.fixture
def linear():
    return reversion_from_name("linear")


@pytest.fixture
def cubic():
    return reversion_from_name("odd_power", power=3)


@pytest.fixture
def square():
    return observable_from_name("even_power", power=2)


@pytest.fixture
def one():
    return observable_from_name("constant", value=1.0)


@pytest.fixture
def unit_model():
    return CoefficientModel.constant()


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
