import os

# the desk-scale runtime budgets assume one core
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import pytest  # noqa: E402

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[_LINES_KEY]

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} ({detail})"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[_LINES_KEY]
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
