import pytest

_LINES = {}


@pytest.fixture(scope="session")
def accept():
    """record(number, title, passed, detail): one line per acceptance criterion."""
    def record(number, title, passed, detail):
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        _LINES[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
