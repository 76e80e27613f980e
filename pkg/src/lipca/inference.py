"""Least-squares inference of the local transition matrix.

All three data regimes reduce to a shared ``K x K`` normal system
``(A, B)`` whose column ``k`` gives ``A T[:, k] = B[:, k]``.  The system is
solved column by column with nonnegativity constraints and the result is
row-normalized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ModelSpec, all_configurations, check_stochastic, empirical_distributions
from .data import EnsembleDataset, TrajectoryDataset
from .dynamics import (
    _check_cap,
    global_transition_matrix,
    marginal_of_pi,
    propagate_distribution,
    stationary_distribution,
)
from .errors import DegenerateSystem, InvalidRange
from .nnls import nnls_gram

IDENTIFIABLE_TOL = 1e-10
RANK_TOL = 1e-10


@dataclass(frozen=True)
class NormalSystem:
    """Normal matrix ``A``, right-hand sides ``B`` (column ``k`` is ``b(., k)``).

    ``weight`` is the number of averaged terms.  ``target_energy`` is the
    mean squared target summed over ``k`` and turns the quadratic form into
    the actual loss value.
    """

    A: np.ndarray
    B: np.ndarray
    weight: float
    target_energy: float = float("nan")
    regime: str = "multi-trajectory"


@dataclass(frozen=True)
class EstimatorResult:
    T_hat: np.ndarray
    lambda_min: float
    residual: float
    regime: str
    flags: tuple = ()
    condition_number: float = float("inf")

    @property
    def identifiable(self) -> bool:
        return "non-identifiable" not in self.flags

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "T_hat": self.T_hat.tolist(),
            "lambda_min": self.lambda_min,
            "residual": self.residual,
            "flags": list(self.flags),
        }


def _onehot(x, K: int) -> np.ndarray:
    return (np.asarray(x)[..., None] == np.arange(K)).astype(float)


# --------------------------------------------------------------- assembly

def trajectory_moments(spec: ModelSpec, states: np.ndarray, block: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory normal pieces ``A^m`` and ``B^m``, each ``(M, K, K)``.

    ``A^m = 1/(LN) sum_{t,n} phi^T phi`` and ``B^m[:, k] = 1/(LN) sum phi^T c(k)``
    with ``phi = phi_{n,t-1}`` and ``c = onehot(X_n(t))``.
    """
    states = np.asarray(states)
    M, Lp1, N = states.shape
    L = Lp1 - 1
    K = spec.K
    Am = np.empty((M, K, K))
    Bm = np.empty((M, K, K))
    for lo in range(0, M, block):
        s = states[lo : lo + block]
        phi = empirical_distributions(spec, s[:, :-1])
        c = _onehot(s[:, 1:], K)
        Am[lo : lo + block] = np.einsum("mtnj,mtnk->mjk", phi, phi) / (L * N)
        Bm[lo : lo + block] = np.einsum("mtnj,mtnk->mjk", phi, c) / (L * N)
    return Am, Bm


def assemble_multitraj(data: TrajectoryDataset) -> NormalSystem:
    Am, Bm = trajectory_moments(data.spec, data.states)
    return NormalSystem(Am.mean(axis=0), Bm.mean(axis=0), data.M * data.L * data.spec.N, 1.0, "multi-trajectory")


def assemble_singletraj(trajectory, spec: ModelSpec) -> NormalSystem:
    """Same sums as the multi-trajectory system with a single trajectory."""
    states = np.asarray(trajectory)[None]
    Am, Bm = trajectory_moments(spec, states)
    return NormalSystem(Am[0], Bm[0], (states.shape[1] - 1) * spec.N, 1.0, "single-trajectory")


def ensemble_means(data: EnsembleDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-time neighborhood means and site frequencies, each ``(L+1, N, K)``."""
    spec = data.spec
    phi_hat = np.stack([empirical_distributions(spec, s).mean(axis=0) for s in data.snapshots])
    p_hat = np.stack([_onehot(s, spec.K).mean(axis=0) for s in data.snapshots])
    return phi_hat, p_hat


def _ensemble_system(phi_prev: np.ndarray, p_next: np.ndarray, regime: str) -> NormalSystem:
    L, N, _ = phi_prev.shape
    A = np.einsum("tnj,tnk->jk", phi_prev, phi_prev) / (L * N)
    B = np.einsum("tnj,tnk->jk", phi_prev, p_next) / (L * N)
    energy = float((p_next**2).sum() / (L * N))
    return NormalSystem(A, B, L * N, energy, regime)


def assemble_ensemble(data: EnsembleDataset) -> NormalSystem:
    """Means at ``t-1`` and frequencies at ``t`` paired for ``t = 1..L``."""
    phi_hat, p_hat = ensemble_means(data)
    return _ensemble_system(phi_hat[:-1], p_hat[1:], "ensemble")


def exact_normal_system(spec: ModelSpec, T, mu0, L: int, mode: str = "trajectory", cap: int | None = None) -> NormalSystem:
    """Infinite-sample normal system from exact laws of ``X(0..L)``.

    Right-hand sides are built from one-step transition probabilities of
    the global matrix, not from ``A @ T``.
    """
    _check_cap(spec, cap)
    T = check_stochastic(T, spec.K)
    P = np.asarray(global_transition_matrix(spec, T, cap))
    mu = propagate_distribution(P, np.asarray(mu0, dtype=float), L)
    digits = all_configurations(spec)
    phi = empirical_distributions(spec, digits)  # (S, N, K)
    # site marginals of the next state: H[x, n, k] = P(X_n(t+1) = k | X(t) = x)
    H = np.stack([P @ _onehot(digits[:, n], spec.K) for n in range(spec.N)], axis=1)
    N, K = spec.N, spec.K
    if mode == "trajectory":
        A = np.einsum("ts,snj,snk->jk", mu[:-1], phi, phi) / (L * N)
        B = np.einsum("ts,snj,snk->jk", mu[:-1], phi, H) / (L * N)
        return NormalSystem(A, B, float("inf"), 1.0, "multi-trajectory")
    if mode == "ensemble":
        e_phi = np.einsum("ts,snk->tnk", mu, phi)
        p = np.einsum("ts,snk->tnk", mu, _onehot(digits, K))
        return _ensemble_system(e_phi[:-1], p[1:], "ensemble")
    if mode == "stationary":
        pi = stationary_distribution(P).weights
        A = np.einsum("s,snj,snk->jk", pi, phi, phi) / N
        B = np.einsum("s,snj,snk->jk", pi, phi, H) / N
        return NormalSystem(A, B, float("inf"), 1.0, "single-trajectory")
    raise ValueError(f"unknown mode {mode!r}")


# ----------------------------------------------------------------- solving

def identifiability_report(system: NormalSystem) -> dict:
    eig = np.linalg.eigvalsh((system.A + system.A.T) / 2)
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    cond = lam_max / lam_min if lam_min > 0 else float("inf")
    return {"lambda_min": lam_min, "condition_number": cond, "identifiable": lam_min > IDENTIFIABLE_TOL}


def quadratic_loss(system: NormalSystem, T) -> float:
    T = np.asarray(T, dtype=float)
    return float(system.target_energy - 2 * np.sum(system.B * T) + np.sum(T * (system.A @ T)))


def solve_constrained(system: NormalSystem, strict: bool = False, tol: float = 1e-12) -> EstimatorResult:
    """Column-wise NNLS followed by row normalization.

    Rows that are (numerically) zero after NNLS become uniform and are
    flagged.  When ``lambda_min(A) < 1e-10`` the result is flagged
    ``non-identifiable``; with ``strict=True`` a :class:`DegenerateSystem`
    carrying the result is raised instead.
    """
    A, B = system.A, system.B
    K = A.shape[0]
    ident = identifiability_report(system)
    flags = []
    cols = []
    for k in range(K):
        res = nnls_gram(A, B[:, k], tol=tol)
        if not res.converged:
            flags.append(f"nnls-maxiter-col{k}")
        cols.append(res.x)
    raw = np.column_stack(cols)
    sums = raw.sum(axis=1)
    zero = sums < 1e-12
    T_hat = np.empty_like(raw)
    T_hat[~zero] = raw[~zero] / sums[~zero, None]
    if zero.any():
        T_hat[zero] = 1.0 / K
        flags.append("uniform-rows:" + ",".join(str(j) for j in np.flatnonzero(zero)))
    if not ident["identifiable"]:
        flags.insert(0, "non-identifiable")
    result = EstimatorResult(
        T_hat=T_hat,
        lambda_min=ident["lambda_min"],
        residual=quadratic_loss(system, T_hat),
        regime=system.regime,
        flags=tuple(flags),
        condition_number=ident["condition_number"],
    )
    if strict and not ident["identifiable"]:
        raise DegenerateSystem(f"lambda_min = {ident['lambda_min']:.3g} < {IDENTIFIABLE_TOL}", result)
    return result


def threshold_matrix(T, theta: float) -> np.ndarray:
    """Zero entries below ``theta`` and renormalize the rows."""
    T = np.array(T, dtype=float)
    T[T < theta] = 0.0
    sums = T.sum(axis=1, keepdims=True)
    if np.any(sums == 0):
        raise ValueError("thresholding removed an entire row")
    return T / sums


def relative_error(T_hat, T) -> float:
    return float(np.linalg.norm(np.asarray(T_hat) - T) / np.linalg.norm(T))


# ------------------------------------------------------------ covariance

@dataclass(frozen=True)
class CovarianceEstimate:
    covariances: np.ndarray  # (K, K, K): [k] is the limit covariance of sqrt(M)(T_hat[:, k] - T[:, k])
    Sigma: np.ndarray  # (K, K, K): [k] is the covariance of the per-trajectory score
    A: np.ndarray


def asymptotic_covariance_multitraj(data: TrajectoryDataset, T_ref=None, centering: str = "residual") -> CovarianceEstimate:
    """Plug-in sandwich ``A^{-1} Sigma_k A^{-1}`` for the multi-trajectory estimator.

    ``Sigma_k`` is the between-trajectory covariance of
    ``xi^m_k = b^m(., k) - A^m T_ref(., k)`` (``centering="residual"``), which
    includes the fluctuation of the normal matrix.  ``centering="mean"``
    uses the covariance of ``b^m(., k)`` alone.  ``T_ref`` defaults to the
    fitted estimate.
    """
    Am, Bm = trajectory_moments(data.spec, data.states)
    A = Am.mean(axis=0)
    ident = identifiability_report(NormalSystem(A, Bm.mean(axis=0), data.M))
    if data.M < 2:
        raise ValueError("need at least two trajectories")
    if T_ref is None:
        T_ref = solve_constrained(NormalSystem(A, Bm.mean(axis=0), data.M)).T_hat
    T_ref = np.asarray(T_ref, dtype=float)
    Ainv = np.linalg.inv(A) if ident["identifiable"] else np.linalg.pinv(A)
    K = data.spec.K
    Sigma = np.empty((K, K, K))
    cov = np.empty((K, K, K))
    for k in range(K):
        if centering == "residual":
            xi = Bm[:, :, k] - Am @ T_ref[:, k]
        elif centering == "mean":
            xi = Bm[:, :, k]
        else:
            raise ValueError(f"unknown centering {centering!r}")
        Sigma[k] = np.atleast_2d(np.cov(xi, rowvar=False))
        cov[k] = Ainv @ Sigma[k] @ Ainv
    if not ident["identifiable"]:
        raise DegenerateSystem(
            f"lambda_min = {ident['lambda_min']:.3g} < {IDENTIFIABLE_TOL}",
            CovarianceEstimate(cov, Sigma, A),
        )
    return CovarianceEstimate(cov, Sigma, A)


# ------------------------------------------------------ sample-size bounds

@dataclass(frozen=True)
class SampleSizeBound:
    epsilon: float
    delta: float
    alpha: float
    s: float
    M_required: float
    regime: str


def sample_size_bound(
    epsilon: float,
    delta: float,
    lambda_min: float,
    frobenius_T: float,
    K: int,
    regime: str = "multi-trajectory",
    N: int | None = None,
    L: int | None = None,
) -> SampleSizeBound:
    """Sample size guaranteeing ``P(||T_hat - T||_F > epsilon) < delta``.

    ``lambda_min`` is the smallest eigenvalue of the limiting normal matrix.
    The ensemble regime also needs ``N`` and ``L``.
    """
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise InvalidRange("epsilon and delta must lie in (0, 1)")
    if not lambda_min > 0:
        raise InvalidRange("lambda_min must be positive")
    if not frobenius_T > 0:
        raise InvalidRange("frobenius_T must be positive")
    alpha = epsilon / 4 * lambda_min
    s = lambda_min / 2 * min(1.0, epsilon / (2 * frobenius_T))
    if regime == "multi-trajectory":
        m1 = (24 * K**2 + 4 * alpha * K) / (3 * alpha**2) * math.log(6 * K**2 / delta)
        m2 = (6 + 2 * s) / (3 * s**2) * math.log(6 * K / delta)
        M = max(m1, m2)
    elif regime == "ensemble":
        if N is None or L is None:
            raise InvalidRange("the ensemble bound needs N and L")
        M = (96 * K**2 + 16 * alpha * K) / (3 * alpha**2) * math.log(12 * N * L * K / delta)
    else:
        raise InvalidRange(f"unknown regime {regime!r}")
    return SampleSizeBound(epsilon, delta, alpha, s, M, regime)


# ------------------------------------------------- stationary identifiability

def hessian_from_moments(p, e_phi) -> dict:
    """Hessian ``p^T p + E[phi]^T E[phi]`` of the marginal-matching loss."""
    p = np.asarray(p, dtype=float)
    e_phi = np.asarray(e_phi, dtype=float)
    H = np.outer(p, p) + np.outer(e_phi, e_phi)
    rank = int((np.linalg.eigvalsh(H) > RANK_TOL).sum())
    return {"H": H, "rank": rank, "identifiable": rank == p.shape[0]}


def stationary_identifiability_hessian(spec: ModelSpec, T) -> dict:
    """Hessian built from the stationary site marginal and mean neighborhood law."""
    P = np.asarray(global_transition_matrix(spec, T))
    pi = stationary_distribution(P).weights
    p = marginal_of_pi(pi, spec, 0)
    e_phi = np.einsum("s,sk->k", pi, empirical_distributions(spec, all_configurations(spec))[:, 0, :])
    out = hessian_from_moments(p, e_phi)
    out.update(p=p, e_phi=e_phi)
    return out
