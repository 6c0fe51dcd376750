import pytest

_CRITERIA = {}


@pytest.fixture
def criterion(capsys):
    """``criterion(n, ok, detail)`` prints one PASS/FAIL line and returns ``ok``."""

    def emit(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[n] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
