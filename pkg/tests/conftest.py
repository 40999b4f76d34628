import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def record(line: str):
        _ACCEPTANCE.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
