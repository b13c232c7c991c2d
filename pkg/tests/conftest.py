import os

# worker pool large enough for the thread-count determinism checks
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for the acceptance summary and print it."""
    lines = request.config.stash[_VERDICTS]

    def record(number: int, ok: bool, detail: str, label: str | None = None):
        line = f"criterion {number}: {label or ('PASS' if ok else 'FAIL')}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
