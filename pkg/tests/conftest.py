import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one summary line per acceptance criterion; printed after the run."""

    def record(criterion: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        for line in _ACCEPTANCE[k].splitlines():
            terminalreporter.write_line(line)
