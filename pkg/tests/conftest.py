from __future__ import annotations

import numpy as np
import pytest

from riskbroker.trace import Trace


def make_trace(pairs, horizon=None) -> Trace:
    """Trace from (start, end) pairs, sorted by start."""
    pairs = sorted(pairs, key=lambda p: p[0])
    if horizon is None:
        horizon = max([e for _, e in pairs] + [1])
    s = np.array([p[0] for p in pairs], dtype=np.int32)
    e = np.array([p[1] for p in pairs], dtype=np.int32)
    return Trace(s, e, horizon)


def random_trace(rng: np.random.Generator, n: int, horizon: int, max_dur: int) -> Trace:
    s = np.sort(rng.integers(0, horizon, n))
    e = np.minimum(s + rng.integers(1, max_dur + 1, n), horizon)
    return Trace(s, e, horizon)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; returns the pass flag."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
