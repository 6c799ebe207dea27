import pytest

_LINES = []


@pytest.fixture
def report(capsys):
    """Record a criterion result; printed at once and again in the session summary."""

    def emit(number: int, passed: bool, detail: str, seconds: float):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail} [{seconds:.1f} s]"
        _LINES.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
