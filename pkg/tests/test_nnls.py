import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import nnls as scipy_nnls

from lipca.nnls import nnls_gram


def _problem(seed, m, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, n))
    y = rng.normal(size=m)
    return X, y


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_matches_scipy_on_full_rank(seed, n):
    X, y = _problem(seed, n + 5, n)
    ref, _ = scipy_nnls(X, y)
    res = nnls_gram(X.T @ X, X.T @ y)
    assert res.converged
    np.testing.assert_allclose(res.x, ref, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_kkt_conditions(seed, n):
    X, y = _problem(seed, n + 3, n)
    A, b = X.T @ X, X.T @ y
    res = nnls_gram(A, b)
    x, w = res.x, b - A @ res.x
    assert np.all(x >= 0)
    scale = 1 + np.abs(b).max()
    assert np.all(w <= 1e-9 * scale)
    assert np.all(np.abs(w[x > 0]) <= 1e-9 * scale)


def test_unconstrained_interior_solution():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    v = np.array([0.3, 0.7])
    res = nnls_gram(A, A @ v)
    np.testing.assert_allclose(res.x, v, atol=1e-14)


def test_identity_recovers_nonnegative_part():
    b = np.array([0.4, -0.2, 0.0, 1.5])
    np.testing.assert_allclose(nnls_gram(np.eye(4), b).x, [0.4, 0, 0, 1.5])


def test_all_negative_gives_zero():
    res = nnls_gram(np.eye(3), -np.ones(3))
    assert np.all(res.x == 0) and res.iterations == 0


def test_singular_gram_stays_feasible():
    # rank-one system: many minimizers, any returned one must be optimal
    p = np.array([0.5, 0.3, 0.2])
    A = np.outer(p, p)
    b = A @ np.array([0.2, 0.5, 0.3])
    res = nnls_gram(A, b)
    assert np.all(res.x >= 0)
    val = 0.5 * res.x @ A @ res.x - b @ res.x
    best = -0.5 * (p @ np.array([0.2, 0.5, 0.3])) ** 2
    assert val <= best + 1e-12


def test_zero_system():
    res = nnls_gram(np.zeros((3, 3)), np.zeros(3))
    assert np.all(res.x == 0) and res.converged


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 7))
def test_rank_deficient_objective_matches_scipy(seed, n, m):
    X, y = _problem(seed, min(m, n - 1), n)
    ref, _ = scipy_nnls(X, y)
    res = nnls_gram(X.T @ X, X.T @ y)
    assert np.all(res.x >= 0)
    ours = np.sum((X @ res.x - y) ** 2)
    theirs = np.sum((X @ ref - y) ** 2)
    assert ours <= theirs + 1e-9 * (1 + theirs)
