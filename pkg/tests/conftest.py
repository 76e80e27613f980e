import numpy as np
import pytest

from lipca.core import encode

# criterion id -> (title, passed)
ACCEPTANCE = {}


def lex_order(K, N):
    """Encoded indices of configurations listed lexicographically, site 1 most significant."""
    idx = np.indices((K,) * N).reshape(N, -1).T
    return np.array([encode(x, K) for x in idx])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key:>2}. {title}")
