import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str, seconds: float, limit: float):
        timed = seconds <= limit
        ok = passed and timed
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} [{seconds:.1f}s / {limit:.0f}s]"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert passed, line
        assert timed, f"runtime {seconds:.1f}s over {limit:.0f}s"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
