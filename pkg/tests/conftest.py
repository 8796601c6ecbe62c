import numpy as np
import pytest

from resvm.dataset import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def reference_set():
    """The n=4, N=10^4 two-class instance used throughout the benchmarks."""
    return generate_synthetic(SyntheticSpec(n=4, N=10_000, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(f, w, h=1e-6):
    w = np.asarray(w, dtype=float)
    grad = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        grad[j] = (f(w + e) - f(w - e)) / (2 * h)
    return grad


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
