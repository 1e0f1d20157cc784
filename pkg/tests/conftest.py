import pytest
from hypothesis import HealthCheck, settings

from .helpers import make_codebooks, preset_4x6

settings.register_profile("pncb", deadline=None, max_examples=40, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pncb")


@pytest.fixture(scope="session")
def fg():
    return preset_4x6()


@pytest.fixture(scope="session")
def design():
    return make_codebooks()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
