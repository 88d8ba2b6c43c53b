"""Shared fixtures and an acceptance-criteria summary at the end of the run."""

import numpy as np
import pytest

ACCEPTANCE_PREFIX = "test_criterion_"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one line per acceptance criterion so the verdict is scannable."""
    lines = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, ()):
            name = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in name:
                continue
            base = name.split("::")[-1]
            if not base.startswith(ACCEPTANCE_PREFIX):
                continue
            key = base[len(ACCEPTANCE_PREFIX):]
            lines.setdefault(key, status.upper())
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: (int(k.split("_")[0]), k)):
        terminalreporter.write_line(f"  criterion {key.replace('_', ' ')}: {lines[key]}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
