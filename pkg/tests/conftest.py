import pytest
from hypothesis import HealthCheck, settings

from windbess.core import SystemConfig

settings.register_profile(
    "default", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def cfg() -> SystemConfig:
    return SystemConfig()


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; returns the verdict so the test can assert it."""
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
