import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Call with (number, passed, detail); the line is echoed and summarized."""

    def record(number, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
