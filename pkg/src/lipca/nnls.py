"""Lawson-Hanson active-set NNLS working directly on normal equations.

Solves ``min_{v >= 0} 1/2 v^T A v - b^T v`` for symmetric PSD ``A``, which
for nonsingular ``A`` is ``min_{v >= 0} ||A^{1/2} v - A^{-1/2} b||^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NNLSResult:
    x: np.ndarray
    dual: np.ndarray  # b - A x; <= tol on the zero set, ~0 on the passive set
    iterations: int
    converged: bool


def _solve_passive(A, b, passive):
    z = np.zeros_like(b)
    idx = np.flatnonzero(passive)
    if idx.size:
        z[idx] = np.linalg.lstsq(A[np.ix_(idx, idx)], b[idx], rcond=None)[0]
    return z


def nnls_gram(A, b, tol: float = 1e-12, max_iter: int | None = None) -> NNLSResult:
    """Active-set NNLS given the Gram matrix ``A`` and vector ``b``.

    ``tol`` bounds the KKT residual: on exit ``max(b - A x)`` over the zero
    set is at most ``tol``.  ``max_iter`` caps the outer iterations
    (default ``10 * n``).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    passive = np.zeros(n, dtype=bool)
    x = np.zeros(n)
    w = b - A @ x
    it = 0
    converged = True
    blocked = np.zeros(n, dtype=bool)
    while True:
        free = ~passive & ~blocked
        if not free.any() or w[free].max() <= tol:
            break
        if it >= max_iter:
            converged = False
            break
        it += 1
        j = int(np.argmax(np.where(free, w, -np.inf)))
        passive[j] = True
        z = _solve_passive(A, b, passive)
        if z[j] <= 0:
            # j cannot enter (degenerate direction); try the next candidate.
            passive[j] = False
            blocked[j] = True
            continue
        blocked[:] = False
        inner = 0
        while (z[passive] <= 0).any():
            inner += 1
            if inner > 3 * n:
                break
            bad = passive & (z <= 0)
            alpha = np.min(x[bad] / (x[bad] - z[bad]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            z = _solve_passive(A, b, passive)
        x = z
        w = b - A @ x
    return NNLSResult(x, w, it, converged)
