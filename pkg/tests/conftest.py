import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_problem(rng, n=None, J=None):
    """Labels y, expert answers and a random CostSpec-compatible (alpha, beta)."""
    n = int(rng.integers(2, 6)) if n is None else n
    J = int(rng.integers(0, 4)) if J is None else J
    alpha = rng.uniform(0, 2, size=n + J)
    beta = rng.uniform(0, 0.5, size=n + J)
    y = int(rng.integers(n))
    experts = rng.integers(0, n, size=J)
    return n, J, alpha, beta, y, experts


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
