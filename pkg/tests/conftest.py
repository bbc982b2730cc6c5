import numpy as np
import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report(request):
    """Record one acceptance line; printed in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def add(criterion, passed, detail):
        lines.append(f"criterion {criterion:>3}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: float(s.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)
