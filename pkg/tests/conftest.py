import pytest

_CRITERIA: dict[str, str] = {}


@pytest.fixture
def record_criterion():
    """Record a PASS/FAIL line for an acceptance criterion; all lines are echoed in the summary."""

    def record(key: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} {key}: {detail}"
        _CRITERIA[key] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[key])
