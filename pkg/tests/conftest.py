"""Shared fixtures; collects acceptance verdicts for the terminal summary."""

import pytest

_VERDICTS = []


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records and prints one verdict line."""

    def record(n, title, ok, detail=""):
        line = f"CRITERION {n:>2} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        _VERDICTS.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS):
        terminalreporter.write_line(line)
