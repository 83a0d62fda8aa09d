import pytest

_LINES_KEY = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Append a one-line verdict that is echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES_KEY, [])

    def _record(number: int, name: str, ok: bool, detail: str) -> bool:
        lines.append(f"criterion {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines):
            terminalreporter.write_line(line)
