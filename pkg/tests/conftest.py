import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from bayesfp.data import from_arrays  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA = os.path.join(ROOT, "data")
CONFIGS = os.path.join(ROOT, "configs")

# acceptance verdicts, echoed in the terminal summary so plain `pytest -v` shows them
CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def gaussian_ds():
    rng = np.random.default_rng(7)
    n = 80
    X = {"x1": rng.uniform(0.5, 3.0, n), "x2": rng.uniform(0.5, 3.0, n), "x3": rng.normal(size=n)}
    y = 1.0 + np.sqrt(X["x1"]) + 0.5 * X["x2"] + rng.normal(0, 0.5, n)
    return from_arrays(X, y)


@pytest.fixture
def bernoulli_ds():
    rng = np.random.default_rng(11)
    n = 200
    X = {"x1": rng.normal(size=n), "x2": rng.uniform(0.5, 2.0, n)}
    eta = -0.5 + 1.2 * X["x1"] - 0.8 * X["x2"]
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
    return from_arrays(X, y, "bernoulli")


@pytest.fixture
def cox_ds():
    rng = np.random.default_rng(3)
    n = 150
    X = {"x1": rng.normal(size=n), "x2": rng.uniform(0.5, 2.0, n)}
    lp = 0.7 * X["x1"] - 0.4 * X["x2"]
    t = rng.exponential(1.0 / np.exp(lp))
    c = rng.exponential(2.0, n)
    times = np.round(np.minimum(t, c), 2) + 0.01
    status = (t <= c).astype(float)
    return from_arrays(X, times, "timetoevent", status)
