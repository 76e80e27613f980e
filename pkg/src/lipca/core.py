"""Model definition, neighborhoods and the stochastic update kernel.

Symbols are 0-based everywhere in the Python API (``0..K-1``) and node
indices are 0-based (``0..N-1``).  External file formats use 1-based
symbols; translation happens in :mod:`lipca.data`.

A configuration ``x`` is encoded little-endian in base ``K``::

    code(x) = sum_n x[n] * K**n

so ``x[0]`` is the least significant digit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InvalidSpec, InvalidTransitionMatrix

STOCHASTIC_TOL = 1e-12
CLAMP_TOL = 1e-15


@dataclass(frozen=True)
class ModelSpec:
    """Alphabet size ``K``, node count ``N`` and neighborhood radius ``n_v``."""

    K: int
    N: int
    n_v: int

    def __post_init__(self):
        for name in ("K", "N", "n_v"):
            if int(getattr(self, name)) != getattr(self, name):
                raise InvalidSpec(f"{name} must be an integer")
        if self.K < 2:
            raise InvalidSpec("K must be ≥ 2")
        if self.N < 1:
            raise InvalidSpec("N must be ≥ 1")
        if self.n_v < 0:
            raise InvalidSpec("n_v must be ≥ 0")

    @cached_property
    def neighbors(self) -> np.ndarray:
        """``(N, |V|)`` array; row ``n`` lists the neighborhood of node ``n``."""
        return np.array([neighborhood(self, n) for n in range(self.N)], dtype=np.intp)

    @property
    def neighborhood_size(self) -> int:
        return min(2 * self.n_v + 1, self.N)

    @property
    def n_states(self) -> int:
        return self.K**self.N

    @property
    def full_network(self) -> bool:
        return self.neighborhood_size == self.N

    def as_tuple(self):
        return (self.N, self.K, self.n_v)


def neighborhood(spec: ModelSpec, n: int) -> list[int]:
    """Nodes within cyclic distance ``n_v`` of ``n``, duplicates removed.

    Order follows the offsets ``-n_v, ..., n_v``; the first occurrence of a
    node under wraparound wins.

    >>> neighborhood(ModelSpec(K=2, N=8, n_v=2), 0)
    [6, 7, 0, 1, 2]
    """
    out: list[int] = []
    for off in range(-spec.n_v, spec.n_v + 1):
        i = (n + off) % spec.N
        if i not in out:
            out.append(i)
    return out


def check_stochastic(T, K: int | None = None, tol: float = STOCHASTIC_TOL) -> np.ndarray:
    """Validate a row-stochastic matrix and return it as a float array.

    Entries in ``[-1e-15, 0)`` are clamped to zero.
    """
    T = np.array(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise InvalidTransitionMatrix(f"expected a square matrix, got shape {T.shape}")
    if K is not None and T.shape[0] != K:
        raise InvalidTransitionMatrix(f"expected a {K}x{K} matrix, got {T.shape}")
    if not np.all(np.isfinite(T)):
        raise InvalidTransitionMatrix("matrix has non-finite entries")
    if T.min() < -CLAMP_TOL or T.max() > 1 + tol:
        raise InvalidTransitionMatrix("entries must lie in [0, 1]")
    T[T < 0] = 0.0
    dev = np.abs(T.sum(axis=1) - 1.0).max()
    if dev > tol:
        raise InvalidTransitionMatrix(f"rows must sum to 1 (max deviation {dev:.3g})")
    return T


def normalize_rows(T) -> np.ndarray:
    T = np.array(T, dtype=float)
    return T / T.sum(axis=1, keepdims=True)


def random_transition_matrix(K: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform(0,1) entries followed by row normalization."""
    return normalize_rows(rng.random((K, K)))


def cyclic_permutation(K: int) -> np.ndarray:
    """``T[k, k+1] = 1`` with wraparound: period ``K``, synchronizing."""
    return np.roll(np.eye(K), 1, axis=1)


def move_to_next(K: int) -> np.ndarray:
    """Shift to the next symbol, last row uniform (deterministic-then-stochastic)."""
    T = np.zeros((K, K))
    T[np.arange(K - 1), np.arange(1, K)] = 1.0
    T[K - 1, :] = 1.0 / K
    return T


# Printed benchmark matrix; its last row sums to 1.0001 so rows are renormalized.
BENCHMARK_T_PRINTED = np.array(
    [
        [0.4719, 0.0315, 0.4966],
        [0.1385, 0.6118, 0.2497],
        [0.2895, 0.4999, 0.2107],
    ]
)
BENCHMARK_T = normalize_rows(BENCHMARK_T_PRINTED)


# ---------------------------------------------------------------- encoding

def encode(x, K: int) -> int | np.ndarray:
    """Base-``K`` little-endian code of a configuration (or a stack of them)."""
    x = np.asarray(x, dtype=np.int64)
    weights = K ** np.arange(x.shape[-1], dtype=np.int64)
    codes = x @ weights
    return int(codes) if codes.ndim == 0 else codes


def decode(code, spec: ModelSpec) -> np.ndarray:
    code = np.asarray(code, dtype=np.int64)
    digits = (code[..., None] // spec.K ** np.arange(spec.N, dtype=np.int64)) % spec.K
    return digits.astype(np.int64)


def all_configurations(spec: ModelSpec) -> np.ndarray:
    """``(K**N, N)`` array whose row ``s`` is ``decode(s)``."""
    return decode(np.arange(spec.n_states), spec)


def rotate(x, shift: int = 1) -> np.ndarray:
    """Cyclic rotation: ``rotate(x)[n] == x[n-1]``."""
    return np.roll(np.asarray(x), shift, axis=-1)


# ------------------------------------------------------- local statistics

def neighbor_counts(spec: ModelSpec, x) -> np.ndarray:
    """Integer symbol counts over each neighborhood, shape ``(..., N, K)``."""
    x = np.asarray(x)
    onehot = (x[..., None] == np.arange(spec.K)).astype(np.int64)
    return onehot[..., spec.neighbors, :].sum(axis=-2)


def empirical_distributions(spec: ModelSpec, x) -> np.ndarray:
    """All local empirical distributions of ``x``, shape ``(..., N, K)``."""
    return neighbor_counts(spec, x) / spec.neighborhood_size


def local_empirical(spec: ModelSpec, x, n: int) -> np.ndarray:
    """Histogram of symbols over the neighborhood of node ``n``."""
    x = np.asarray(x)
    counts = np.bincount(x[spec.neighbors[n]], minlength=spec.K)
    return counts / spec.neighborhood_size


def site_distribution(phi, T) -> np.ndarray:
    """Next-symbol law ``phi @ T`` for a site with empirical distribution ``phi``."""
    p = np.asarray(phi, dtype=float) @ np.asarray(T, dtype=float)
    p[(p < 0) & (p >= -CLAMP_TOL)] = 0.0
    return p


def site_probabilities(spec: ModelSpec, T: np.ndarray, x) -> np.ndarray:
    """Per-site next-symbol laws for every node, shape ``(..., N, K)``.

    Computed as an explicit sum over rows of ``T`` so that single-trajectory
    and batched calls give bit-identical results.
    """
    counts = neighbor_counts(spec, x)
    probs = np.zeros(counts.shape, dtype=float)
    for j in range(spec.K):
        probs += counts[..., j, None] * T[j]
    probs /= spec.neighborhood_size
    np.maximum(probs, 0.0, out=probs)
    return probs


def sample_categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling with one uniform per categorical vector."""
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[..., -1:]
    idx = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def advance(spec: ModelSpec, T: np.ndarray, x, u) -> np.ndarray:
    """Synchronous update of ``x`` (shape ``(..., N)``) driven by uniforms ``u``."""
    return sample_categorical(site_probabilities(spec, T, x), np.asarray(u))


# ------------------------------------------------------------- randomness

def trajectory_rng(seed: int, m: int) -> np.random.Generator:
    """Private stream of trajectory ``m`` under master ``seed``.

    The stream depends only on ``(seed, m)``, so trajectories are
    reproducible independently of batch size or evaluation order.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(m)])))


def step(spec: ModelSpec, T, x, rng: np.random.Generator) -> np.ndarray:
    """One synchronous update; consumes ``N`` uniforms from ``rng``."""
    return advance(spec, np.asarray(T, dtype=float), np.asarray(x), rng.random(spec.N))


def simulate_trajectory(spec: ModelSpec, T, x0, L: int, rng: np.random.Generator) -> np.ndarray:
    """Return ``X(0..L)`` as an ``(L+1, N)`` int array with ``X(0) = x0``.

    Draws all ``L*N`` uniforms up front (time-major), which is the same
    consumption order as :func:`step` called ``L`` times.
    """
    if L < 1:
        raise ValueError("L must be ≥ 1")
    T = np.asarray(T, dtype=float)
    u = rng.random((L, spec.N))
    return simulate_with_uniforms(spec, T, np.asarray(x0)[None, :], u[None])[0]


def simulate_with_uniforms(spec: ModelSpec, T: np.ndarray, x0: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Batched simulation: ``x0`` is ``(M, N)``, ``u`` is ``(M, L, N)``.

    Returns ``(M, L+1, N)`` states.
    """
    M, L, _ = u.shape
    dtype = np.uint8 if spec.K <= 255 else np.int64
    out = np.empty((M, L + 1, spec.N), dtype=dtype)
    out[:, 0] = x0
    for t in range(L):
        out[:, t + 1] = advance(spec, T, out[:, t], u[:, t])
    return out


# ---------------------------------------------------- initial conditions

@dataclass(frozen=True)
class Init:
    """Initial law of ``X(0)``.

    ``kind`` is one of ``"point"`` (``value`` is a configuration),
    ``"uniform"`` (i.i.d. uniform sites), ``"site_weights"`` (i.i.d. sites
    with the given length-``K`` law) or ``"joint"`` (a law over all
    ``K**N`` encoded configurations).
    """

    kind: str
    value: tuple = ()

    @classmethod
    def point(cls, x0: Sequence[int]) -> "Init":
        return cls("point", tuple(int(v) for v in x0))

    @classmethod
    def uniform(cls) -> "Init":
        return cls("uniform")

    @classmethod
    def site_weights(cls, w: Sequence[float]) -> "Init":
        return cls("site_weights", tuple(float(v) for v in w))

    @classmethod
    def joint(cls, w: Sequence[float]) -> "Init":
        return cls("joint", tuple(float(v) for v in w))

    def _site_law(self, spec: ModelSpec) -> np.ndarray:
        if self.kind == "uniform":
            return np.full(spec.K, 1.0 / spec.K)
        w = np.array(self.value, dtype=float)
        if w.shape != (spec.K,) or w.min() < 0 or w.sum() <= 0:
            raise ValueError("site weights must be a nonnegative length-K vector")
        return w / w.sum()

    def n_uniforms(self, spec: ModelSpec) -> int:
        """Uniform draws consumed by :meth:`sample`."""
        return {"point": 0, "uniform": spec.N, "site_weights": spec.N, "joint": 1}[self.kind]

    def from_uniforms(self, spec: ModelSpec, u) -> np.ndarray:
        """Initial states from pre-drawn uniforms, shape ``(M, n_uniforms)`` -> ``(M, N)``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        M = u.shape[0]
        if self.kind == "point":
            x0 = np.array(self.value, dtype=np.int64)
            if x0.shape != (spec.N,) or x0.min() < 0 or x0.max() >= spec.K:
                raise ValueError("point initial state must be a length-N configuration")
            return np.broadcast_to(x0, (M, spec.N)).copy()
        if self.kind in ("uniform", "site_weights"):
            p = self._site_law(spec)
            return sample_categorical(np.broadcast_to(p, (M, spec.N, spec.K)), u)
        if self.kind == "joint":
            mu = self.distribution(spec)
            return decode(sample_categorical(np.broadcast_to(mu, (M, mu.size)), u[:, 0]), spec)
        raise ValueError(f"unknown init kind {self.kind!r}")

    def sample(self, spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
        return self.from_uniforms(spec, rng.random((1, self.n_uniforms(spec))))[0]

    def distribution(self, spec: ModelSpec) -> np.ndarray:
        """Exact law over encoded configurations (length ``K**N``)."""
        S = spec.n_states
        if self.kind == "point":
            mu = np.zeros(S)
            mu[encode(self.value, spec.K)] = 1.0
            return mu
        if self.kind == "joint":
            mu = np.array(self.value, dtype=float)
            if mu.shape != (S,) or mu.min() < 0:
                raise ValueError("joint weights must be a nonnegative length-K**N vector")
            return mu / mu.sum()
        p = self._site_law(spec)
        return np.prod(p[all_configurations(spec)], axis=1)
