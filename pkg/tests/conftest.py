import pytest

_LINES: dict[int, str] = {}


@pytest.fixture()
def report():
    """Record the pass/fail line of an acceptance criterion."""

    def _record(number: int, ok: bool, detail: str) -> bool:
        _LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_LINES[number])
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
