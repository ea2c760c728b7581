import numpy as np
import pytest

from dpbss.dataset import Dataset, GenConfig, generate_synthetic


def random_dataset(rng, n, p, r=1.0, x_max=1.0):
    """Bounded dataset with entries uniform inside the declared box."""
    X = rng.uniform(-x_max, x_max, size=(n, p))
    y = rng.uniform(-r, r, size=n)
    return Dataset(X, y, r, x_max)


def hadamard_design(n):
    """``n x n`` +-1 matrix with ``X'X = n I`` (Sylvester construction)."""
    H = np.array([[1.0]])
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_instance():
    """p = 8, s = 2 regression used by the exact-chain checks."""
    return generate_synthetic(GenConfig(n=30, p=8, s=2, signal=[0.6, -0.4], noise=0.1, seed=3))


@pytest.fixture(scope="session")
def tiny_instance():
    """p = 6, s = 2 (15 models)."""
    return generate_synthetic(GenConfig(n=25, p=6, s=2, signal=[0.5, 0.5], noise=0.2, seed=11))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
