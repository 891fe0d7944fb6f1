import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "").rsplit("::", 1)[-1]
            if name.startswith("test_criterion_") and getattr(rep, "when", "call") in ("call", "setup"):
                n = int(name.split("_")[2])
                ok = outcome == "passed"
                lines[n] = lines.get(n, True) and ok
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(f"criterion {n}: {'PASS' if lines[n] else 'FAIL'}")
