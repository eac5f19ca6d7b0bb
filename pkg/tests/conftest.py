"""Collects one verdict line per acceptance criterion and prints them after the run."""
import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    def add(name: str, passed: bool, detail: str) -> None:
        line = f"{name} {'PASS' if passed else 'FAIL'}: {detail}"
        _LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
