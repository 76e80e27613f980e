"""Exact finite-state analysis of the global chain on ``[K]^N``.

Everything here enumerates configurations, so it is limited to
``K**N <= ENUMERATION_CAP`` states.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .core import (
    ModelSpec,
    all_configurations,
    check_stochastic,
    empirical_distributions,
)
from .errors import (
    EnumerationTooLarge,
    NoConvergence,
    NotErgodic,
    NotPrimitive,
    NotRepresentable,
)

ENUMERATION_CAP = 2**24


def _check_cap(spec: ModelSpec, cap: int | None) -> None:
    cap = ENUMERATION_CAP if cap is None else cap
    if spec.n_states > cap:
        raise EnumerationTooLarge(f"K**N = {spec.n_states} exceeds the enumeration cap {cap}")


@dataclass(frozen=True)
class GlobalTransitionMatrix:
    entries: np.ndarray
    spec: ModelSpec

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @property
    def shape(self):
        return self.entries.shape


def site_factor_table(spec: ModelSpec, T: np.ndarray) -> np.ndarray:
    """``F[x, n, k] = phi_n(x) @ T[:, k]`` for every encoded configuration ``x``."""
    phi = empirical_distributions(spec, all_configurations(spec))
    return phi @ T


def global_transition_matrix(spec: ModelSpec, T, cap: int | None = None) -> GlobalTransitionMatrix:
    """Dense ``K**N x K**N`` transition matrix of the whole automaton.

    ``P[x, y] = prod_n F[x, n, y_n]`` where ``F`` is the per-site factor
    table, computed once per ``x`` and reused across all targets ``y``.
    """
    _check_cap(spec, cap)
    T = check_stochastic(T, spec.K)
    F = site_factor_table(spec, T)
    digits = all_configurations(spec)
    P = np.ones((spec.n_states, spec.n_states))
    for n in range(spec.N):
        P *= F[:, n, :][:, digits[:, n]]
    return GlobalTransitionMatrix(P, spec)


def local_from_global(P: GlobalTransitionMatrix, tol: float = 1e-8) -> np.ndarray:
    """Recover ``T[j, k] = P((j,...,j), (k,...,k)) ** (1/N)``."""
    spec = P.spec
    K, N = spec.K, spec.N
    diag_codes = np.array([sum(j * K**n for n in range(N)) for j in range(K)])
    block = np.asarray(P)[np.ix_(diag_codes, diag_codes)]
    T = np.clip(block, 0.0, None) ** (1.0 / N)
    dev = np.abs(T.sum(axis=1) - 1.0).max()
    if dev > tol:
        raise NotRepresentable(f"recovered rows deviate from stochastic by {dev:.3g}")
    return T


# ------------------------------------------------------------ structure

@dataclass(frozen=True)
class PeriodReport:
    irreducible: bool
    period: int
    cyclic_classes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "irreducible": self.irreducible,
            "period": self.period,
            "classes": [list(map(int, c)) for c in self.cyclic_classes],
        }


def _bfs_levels(adj: list[list[int]], start: int, n: int) -> list[int]:
    level = [-1] * n
    level[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    return level


def _class_period(support: np.ndarray, members: np.ndarray) -> int:
    """Period of the strongly connected class ``members`` (gcd of level gaps)."""
    sub = support[np.ix_(members, members)]
    n = len(members)
    adj = [list(np.flatnonzero(sub[i])) for i in range(n)]
    level = _bfs_levels(adj, 0, n)
    d = 0
    for u in range(n):
        for v in adj[u]:
            d = math.gcd(d, level[u] + 1 - level[v])
    return abs(d) if d else 0


def period_report(T) -> PeriodReport:
    """Irreducibility, period and cyclic classes of the support graph of ``T``.

    An edge ``j -> k`` exists iff ``T[j, k] > 0`` exactly.  For a reducible
    matrix ``period`` is the lcm of the periods of its closed classes and no
    cyclic classes are returned.
    """
    T = np.asarray(T, dtype=float)
    support = T > 0
    K = T.shape[0]
    n_comp, labels = connected_components(support, directed=True, connection="strong")
    if n_comp == 1:
        adj = [list(np.flatnonzero(support[j])) for j in range(K)]
        level = _bfs_levels(adj, 0, K)
        d = 0
        for u in range(K):
            for v in adj[u]:
                d = math.gcd(d, level[u] + 1 - level[v])
        d = abs(d)
        classes = [sorted(j for j in range(K) if level[j] % d == r) for r in range(d)]
        return PeriodReport(True, d, classes)

    d = 1
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        outside = np.setdiff1d(np.arange(K), members)
        closed = not support[np.ix_(members, outside)].any()
        if closed:
            pc = _class_period(support, members)
            if pc:
                d = d * pc // math.gcd(d, pc)
    return PeriodReport(False, d, [])


def is_irreducible_aperiodic(M) -> bool:
    rep = period_report(M)
    return rep.irreducible and rep.period == 1


def predicts_synchronization(T) -> bool:
    """Irreducible with period equal to the alphabet size."""
    rep = period_report(T)
    return rep.irreducible and rep.period == np.asarray(T).shape[0]


def is_ergodic(T) -> bool:
    return is_irreducible_aperiodic(T)


def detect_synchronization(trajectory) -> int | None:
    """Smallest ``t0`` such that every recorded ``X(t)``, ``t >= t0``, is constant.

    Only certifies what the window shows; ``None`` if the last state is mixed.
    """
    traj = np.asarray(trajectory)
    if traj.ndim != 2 or traj.shape[0] == 0:
        raise ValueError("expected a nonempty (L+1, N) trajectory")
    constant = np.all(traj == traj[:, :1], axis=1)
    if not constant[-1]:
        return None
    mixed = np.flatnonzero(~constant)
    return 0 if mixed.size == 0 else int(mixed[-1] + 1)


# ------------------------------------------------------------ stationarity

@dataclass(frozen=True)
class StationaryDistribution:
    weights: np.ndarray
    residual: float
    iterations: int


def stationary_distribution(M, tol: float = 1e-12, max_iters: int = 10**6, check: bool = True) -> StationaryDistribution:
    """Power iteration from the uniform vector until ``||pi M - pi||_1 < tol``."""
    M = np.asarray(M, dtype=float)
    if check and not is_irreducible_aperiodic(M):
        raise NotErgodic("matrix is not irreducible and aperiodic")
    pi = np.full(M.shape[0], 1.0 / M.shape[0])
    residual = np.inf
    # ``updates`` counts multiplications already applied to ``pi``.
    for updates in range(max_iters + 1):
        nxt = pi @ M
        residual = float(np.abs(nxt - pi).sum())
        if residual < tol:
            return StationaryDistribution(pi, residual, updates)
        pi = nxt / nxt.sum()
    raise NoConvergence(f"power iteration did not reach {tol} (residual {residual:.3g})", residual, max_iters)


def marginal_of_pi(pi, spec: ModelSpec, n: int) -> np.ndarray:
    """Law of ``X_n`` under a distribution over encoded configurations."""
    pi = np.asarray(pi, dtype=float)
    digits = all_configurations(spec)[:, n]
    return np.bincount(digits, weights=pi, minlength=spec.K)


def propagate_distribution(P, mu0, L: int) -> np.ndarray:
    """Exact laws ``mu_0, ..., mu_L`` with ``mu_{t+1} = mu_t P``; shape ``(L+1, S)``."""
    P = np.asarray(P, dtype=float)
    out = np.empty((L + 1, P.shape[0]))
    out[0] = mu0
    for t in range(L):
        out[t + 1] = out[t] @ P
    return out


# ------------------------------------------------------------- contraction

def tv_distance(p, q) -> float:
    """L1 distance (the total variation norm convention used throughout)."""
    return float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def tau_coefficient(M) -> float:
    """Half the largest L1 distance between two rows."""
    M = np.asarray(M, dtype=float)
    best = 0.0
    for i in range(M.shape[0] - 1):
        best = max(best, float(np.abs(M[i + 1 :] - M[i]).sum(axis=1).max()))
    return 0.5 * best


def mixing_exponent(P, cap: int | None = None) -> int:
    """Smallest ``t`` with ``P**t`` entrywise positive."""
    support = (np.asarray(P) > 0).astype(np.int64)
    cap = 4 * support.shape[0] if cap is None else cap
    power = support.copy()
    for t in range(1, cap + 1):
        if power.all():
            return t
        power = np.minimum(power @ support, 1)
    raise NotPrimitive(f"no entrywise-positive power up to t = {cap}")


def max_tv_curve(P, pi, t_max: int) -> np.ndarray:
    """``max_x ||P**t(x, .) - pi||_1`` for ``t = 0..t_max``."""
    P = np.asarray(P, dtype=float)
    Pt = np.eye(P.shape[0])
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        out[t] = np.abs(Pt - pi).sum(axis=1).max()
        Pt = Pt @ P
    return out


@dataclass(frozen=True)
class DecayFit:
    C: float
    rho: float
    ell0: int
    curve: np.ndarray
    monotone_after_ell0: bool


def fit_tv_decay(P, pi=None, t_max: int = 60, floor: float = 1e-11) -> DecayFit:
    """Least-squares fit of ``log max-TV(t) ~ log C + t log rho`` for ``t >= ell0``.

    Points below ``floor`` are dropped (round-off plateau).
    """
    ell0 = mixing_exponent(P)
    if pi is None:
        pi = stationary_distribution(P).weights
    curve = max_tv_curve(P, pi, t_max)
    ts = np.arange(t_max + 1)
    keep = (ts >= ell0) & (curve > floor)
    if keep.sum() < 2:
        keep = (ts >= ell0) & (ts <= ell0 + 1)
        y = np.log(np.maximum(curve[keep], np.finfo(float).tiny))
    else:
        y = np.log(curve[keep])
    slope, intercept = np.polyfit(ts[keep], y, 1)
    tail = curve[ell0:]
    monotone = bool(np.all(np.diff(tail) <= 1e-14))
    return DecayFit(float(np.exp(intercept)), float(np.exp(slope)), ell0, curve, monotone)


# ------------------------------------------------------------- Lipschitz

def op_norm_11(D) -> float:
    """``sup_{||v||_1 <= 1} ||v D||_1``: the largest absolute row sum."""
    return float(np.abs(np.asarray(D)).sum(axis=1).max())


@dataclass(frozen=True)
class LipschitzRecord:
    dP_1: float
    dP_2: float
    dpi_1: float
    dpi_2: float
    dT_1: float
    dT_2: float
    dT_11: float
    bound_L1: float
    bound_pi: float
    ell0: int
    tau: float

    def ratios(self) -> dict:
        return {
            "dP1_dT1": self.dP_1 / self.dT_1,
            "dP2_dT2": self.dP_2 / self.dT_2,
            "dpi1_dT1": self.dpi_1 / self.dT_1,
            "dpi2_dT2": self.dpi_2 / self.dT_2,
        }


def lipschitz_ratios(spec: ModelSpec, T1, T2, check: bool = True) -> LipschitzRecord:
    """Perturbation of ``P`` and ``pi`` against the bounds in terms of ``T1 - T2``.

    With ``check=True`` a violated bound raises ``AssertionError``.
    """
    T1 = check_stochastic(T1, spec.K)
    T2 = check_stochastic(T2, spec.K)
    P1 = np.asarray(global_transition_matrix(spec, T1))
    P2 = np.asarray(global_transition_matrix(spec, T2))
    pi1 = stationary_distribution(P1).weights
    pi2 = stationary_distribution(P2).weights
    dT, dP, dpi = T1 - T2, P1 - P2, pi1 - pi2
    dT_1 = float(np.abs(dT).sum())
    dT_11 = op_norm_11(dT)
    K, N = spec.K, spec.N
    bound_L1 = N * K ** (N - 1) * min(dT_1, K * dT_11)
    ell0 = mixing_exponent(P1)
    tau = tau_coefficient(np.linalg.matrix_power(P1, ell0))
    bound_pi = (1 + (ell0 - 1) * K**N) / (1 - tau) * bound_L1
    rec = LipschitzRecord(
        dP_1=float(np.abs(dP).sum()),
        dP_2=float(np.sqrt((dP**2).sum())),
        dpi_1=float(np.abs(dpi).sum()),
        dpi_2=float(np.sqrt((dpi**2).sum())),
        dT_1=dT_1,
        dT_2=float(np.sqrt((dT**2).sum())),
        dT_11=dT_11,
        bound_L1=float(bound_L1),
        bound_pi=float(bound_pi),
        ell0=ell0,
        tau=tau,
    )
    if check:
        slack = 1e-12
        assert rec.dP_1 <= rec.bound_L1 * (1 + slack) + slack, rec
        assert rec.dpi_1 <= rec.bound_pi * (1 + slack) + slack, rec
    return rec


# ----------------------------------------------------------------- report

def analysis_report(spec: ModelSpec, T, include_global: bool = False, include_stationary: bool = False, t_max: int = 60) -> dict:
    """JSON-ready summary: period structure, predicates and optional chain diagnostics."""
    T = check_stochastic(T, spec.K)
    rep = period_report(T)
    ergodic = rep.irreducible and rep.period == 1
    out = {
        "spec": {"N": spec.N, "K": spec.K, "n_v": spec.n_v},
        **rep.to_dict(),
        "ergodic": ergodic,
        "predicts_sync": rep.irreducible and rep.period == spec.K,
        "pi": None,
        "residual": None,
    }
    if include_global or include_stationary:
        P = np.asarray(global_transition_matrix(spec, T))
        if include_global:
            out["P"] = P.tolist()
        out["tau"] = tau_coefficient(P)
        if ergodic:
            st = stationary_distribution(P)
            out["pi"] = st.weights.tolist()
            out["residual"] = st.residual
            out["pi_local"] = stationary_distribution(T).weights.tolist()
            fit = fit_tv_decay(P, st.weights, t_max=t_max)
            out.update(ell0=fit.ell0, C=fit.C, rho=fit.rho, tv_monotone=fit.monotone_after_ell0)
    return out
