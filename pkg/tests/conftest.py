"""Acceptance-criterion verdicts: recorded per test, echoed after the run."""

import time
from contextlib import contextmanager

import pytest

_criterion_lines = []


@pytest.fixture
def criterion():
    """Context manager factory: times a criterion block, records PASS or FAIL."""

    @contextmanager
    def record(number, name):
        t0 = time.monotonic()
        try:
            yield
        except BaseException:
            _criterion_lines.append(
                f"[criterion {number}] {name}: FAIL ({time.monotonic() - t0:.1f}s)"
            )
            raise
        _criterion_lines.append(
            f"[criterion {number}] {name}: PASS ({time.monotonic() - t0:.1f}s)"
        )

    return record


def pytest_terminal_summary(terminalreporter):
    # Written outside capture so the verdicts survive into piped logs.
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)
