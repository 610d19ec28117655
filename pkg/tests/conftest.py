import pytest

_CRITERIA: dict = {}


class CriterionRecorder:
    """Collects one verdict line per acceptance criterion."""

    def __init__(self, store: dict):
        self.store = store

    def record(self, number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        self.store[number] = line
        print(line)


@pytest.fixture(scope="session")
def criterion():
    return CriterionRecorder(_CRITERIA)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
