import math

import numpy as np
import pytest


def brute_force_quantile(residuals, weights, beta, tol=1e-12):
    """Smallest atom v with sum(w[r <= v]) >= beta, by enumerating atoms."""
    residuals = [float(r) for r in residuals]
    weights = [float(w) for w in weights]
    total = math.fsum(weights)
    for v in sorted(set(residuals)):
        mass = math.fsum(w for r, w in zip(residuals, weights) if r <= v) / total
        if mass >= beta - tol:
            return v
    return max(residuals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
