import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line, then assert it."""

    def check(number, label, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {label}"
        if detail:
            line += f"  [{detail}]"
        _LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
