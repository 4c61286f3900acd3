from __future__ import annotations

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture()
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion (``ok=None`` means skipped)."""

    def record(label: str, ok, detail: str):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        request.config.stash[_LINES].append(f"{status}  {label}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
