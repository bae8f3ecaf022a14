import pytest

CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the verdict line for one acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(CRITERIA[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])
