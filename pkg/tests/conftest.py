import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Lines are echoed immediately and repeated in the terminal summary so
    they survive output capture.
    """

    def _report(key, ok, detail):
        line = f"[{key}] {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES[key] = line
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
