import pytest

from meterguard.field import Field, FixedPointCodec

# criterion lines collected by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list = []


@pytest.fixture
def f251():
    return Field(251)


@pytest.fixture
def f61():
    return Field()


@pytest.fixture
def codec():
    return FixedPointCodec()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
