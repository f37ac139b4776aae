"""Shared oracles for the test suite."""

import numpy as np
import pytest


def central_difference(f, arrays, h=1e-5):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. every
    entry of every array in ``arrays`` (perturbed in place, then restored)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = f()
            flat[idx] = orig - h
            fm = f()
            flat[idx] = orig
            gflat[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-7):
    """Largest per-coordinate |a - n| / max(|a|, |n|, floor).

    The floor keeps coordinates whose true gradient is ~0 from dividing
    finite-difference round-off by zero.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=float)
        n = np.asarray(n, dtype=float)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip("abc:")), s)):
            terminalreporter.write_line(line)
