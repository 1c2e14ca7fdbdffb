"""Shared test helpers and the acceptance-summary terminal hook."""

from __future__ import annotations

import numpy as np
import pytest

# Populated by tests/test_acceptance.py; printed once at the end of the run
# so every criterion shows exactly one PASS/FAIL line in the terminal output.
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def unit_rows(seed: int, n: int, d: int) -> np.ndarray:
    rows = np.random.default_rng(seed).standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)
