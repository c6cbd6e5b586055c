import sys
from pathlib import Path

# oracles.py sits next to the tests
sys.path.insert(0, str(Path(__file__).parent))

import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def verdict_line(request):
    """Record one ``PASS``/``FAIL`` line; all lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(label: str, passed: bool, detail: str = ""):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
