import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipca.core import (
    BENCHMARK_T,
    Init,
    ModelSpec,
    all_configurations,
    cyclic_permutation,
    empirical_distributions,
    move_to_next,
    random_transition_matrix,
    simulate_trajectory,
)
from lipca.data import EnsembleDataset, TrajectoryDataset, generate_multitraj
from lipca.dynamics import global_transition_matrix, marginal_of_pi, stationary_distribution
from lipca.errors import DegenerateSystem, InvalidRange
from lipca.inference import (
    NormalSystem,
    assemble_ensemble,
    assemble_multitraj,
    assemble_singletraj,
    asymptotic_covariance_multitraj,
    ensemble_means,
    exact_normal_system,
    hessian_from_moments,
    identifiability_report,
    quadratic_loss,
    relative_error,
    sample_size_bound,
    solve_constrained,
    threshold_matrix,
    trajectory_moments,
)


def traj_data(spec, states):
    return TrajectoryDataset(spec, np.asarray(states, dtype=np.uint8))


class TestAssembly:
    def test_single_step_from_all_ones(self):
        spec = ModelSpec(3, 10, 1)
        x1 = np.array([1, 1, 0, 2, 1, 0, 0, 1, 1, 2])
        sys_ = assemble_singletraj(np.stack([np.zeros(10, int), x1]), spec)
        np.testing.assert_allclose(sys_.A, np.diag([1.0, 0, 0]))
        np.testing.assert_allclose(sys_.B[0], np.bincount(x1, minlength=3) / 10)
        np.testing.assert_allclose(sys_.B[1:], 0)

    def test_single_equals_multi_with_one_trajectory(self):
        spec = ModelSpec(3, 5, 1)
        traj = simulate_trajectory(spec, BENCHMARK_T, np.array([0, 1, 2, 0, 1]), 30, np.random.default_rng(0))
        a = assemble_singletraj(traj, spec)
        b = assemble_multitraj(traj_data(spec, traj[None]))
        np.testing.assert_allclose(a.A, b.A, atol=1e-15)
        np.testing.assert_allclose(a.B, b.B, atol=1e-15)

    def test_synchronized_segment_has_rank_one(self):
        spec = ModelSpec(3, 6, 1)
        traj = np.full((5, 6), 2)
        sys_ = assemble_singletraj(traj, spec)
        assert np.linalg.matrix_rank(sys_.A) == 1

    def test_deterministic_prefix_contributions(self):
        K = 3
        spec = ModelSpec(K, 4, 1)
        traj = simulate_trajectory(spec, move_to_next(K), np.zeros(4, int), K - 1, np.random.default_rng(0))
        sys_ = assemble_singletraj(traj, spec)
        e = np.eye(K)
        A = sum(np.outer(e[t], e[t]) for t in range(K - 1)) / (K - 1)
        B = sum(np.outer(e[t], e[t + 1]) for t in range(K - 1)) / (K - 1)
        np.testing.assert_allclose(sys_.A, A)
        np.testing.assert_allclose(sys_.B, B)

    def test_moments_are_per_trajectory_means(self):
        spec = ModelSpec(2, 4, 1)
        data = generate_multitraj(spec, [[0.7, 0.3], [0.4, 0.6]], Init.uniform(), 7, 6, seed=1)
        Am, Bm = trajectory_moments(spec, data.states, block=3)
        for m in range(7):
            s = assemble_singletraj(data.states[m], spec)
            np.testing.assert_allclose(Am[m], s.A, atol=1e-15)
            np.testing.assert_allclose(Bm[m], s.B, atol=1e-15)

    def test_ensemble_with_single_samples(self):
        spec = ModelSpec(3, 5, 1)
        rng = np.random.default_rng(2)
        snaps = [rng.integers(0, 3, (1, 5)) for _ in range(4)]
        phi_hat, p_hat = ensemble_means(EnsembleDataset(spec, snaps))
        for t, s in enumerate(snaps):
            np.testing.assert_allclose(phi_hat[t], empirical_distributions(spec, s[0]))
            np.testing.assert_allclose(p_hat[t], np.eye(3)[s[0]])

    def test_quadratic_loss_matches_direct_sum(self):
        spec = ModelSpec(3, 4, 1)
        data = generate_multitraj(spec, BENCHMARK_T, Init.uniform(), 20, 5, seed=3)
        sys_ = assemble_multitraj(data)
        T = random_transition_matrix(3, np.random.default_rng(0))
        phi = empirical_distributions(spec, data.states[:, :-1])
        c = np.eye(3)[data.states[:, 1:]]
        direct = np.mean(np.sum((c - phi @ T) ** 2, axis=-1))
        assert quadratic_loss(sys_, T) == pytest.approx(direct, rel=1e-10)


class TestOracle:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_identity(self, seed):
        spec = ModelSpec(3, 4, 1)
        T = random_transition_matrix(3, np.random.default_rng(seed))
        sys_ = exact_normal_system(spec, T, Init.uniform().distribution(spec), 5)
        res = solve_constrained(sys_)
        np.testing.assert_allclose(res.T_hat, T, atol=1e-10)
        assert res.residual >= -1e-12
        assert "non-identifiable" not in res.flags

    def test_ensemble_oracle_identity(self):
        spec = ModelSpec(3, 4, 1)
        T = random_transition_matrix(3, np.random.default_rng(7))
        mu0 = Init.point([0, 1, 2, 0]).distribution(spec)
        res = solve_constrained(exact_normal_system(spec, T, mu0, 6, mode="ensemble"))
        np.testing.assert_allclose(res.T_hat, T, atol=1e-9)

    def test_stationary_mode_matches_long_run(self):
        spec = ModelSpec(3, 3, 1)
        A_inf = exact_normal_system(spec, BENCHMARK_T, np.full(27, 1 / 27), 1, mode="stationary").A
        devs = []
        for L in (500, 8000):
            d = []
            for seed in range(4):
                rng = np.random.default_rng(seed)
                traj = simulate_trajectory(spec, BENCHMARK_T, rng.integers(0, 3, 3), L, rng)
                d.append(np.linalg.norm(assemble_singletraj(traj, spec).A - A_inf) / np.linalg.norm(A_inf))
            devs.append(np.mean(d))
        # sixteen times the length: deviation shrinks roughly by four
        assert devs[1] < devs[0] / 2

    def test_empirical_matches_exact_within_bands(self):
        spec = ModelSpec(2, 3, 1)
        T = np.array([[0.7, 0.3], [0.4, 0.6]])
        init = Init.site_weights([0.8, 0.2])
        L = 4
        exact = exact_normal_system(spec, T, init.distribution(spec), L)
        exact_e = exact_normal_system(spec, T, init.distribution(spec), L, mode="ensemble")
        reps = [generate_multitraj(spec, T, init, 2000, L, seed=100 + r) for r in range(20)]
        for build, ref in ((assemble_multitraj, exact), (lambda d: assemble_ensemble(_linked(d)), exact_e)):
            vals = np.array([np.concatenate([build(d).A.ravel(), build(d).B.ravel()]) for d in reps])
            target = np.concatenate([ref.A.ravel(), ref.B.ravel()])
            se = vals.std(axis=0, ddof=1) / np.sqrt(len(reps))
            assert np.all(np.abs(vals.mean(axis=0) - target) <= 4 * se + 1e-12)


def _linked(d):
    return EnsembleDataset(d.spec, [d.states[:, t] for t in range(d.L + 1)])


class TestIdentifiability:
    def test_singular_for_short_deterministic_runs(self):
        K = 4
        spec = ModelSpec(K, 3, 1)
        mu0 = Init.point([0, 0, 0]).distribution(spec)
        lam = [identifiability_report(exact_normal_system(spec, move_to_next(K), mu0, L))["lambda_min"] for L in range(1, K + 2)]
        assert all(v < 1e-12 for v in lam[: K - 1])
        assert all(v > 0.1 for v in lam[K - 1:])

    def test_stationary_full_network_ensemble_rank_one(self):
        spec = ModelSpec(2, 2, 1)
        T = np.array([[0.75, 0.25], [0.5, 0.5]])
        pi = stationary_distribution(global_transition_matrix(spec, T)).weights
        sys_ = exact_normal_system(spec, T, pi, 5, mode="ensemble")
        assert np.linalg.matrix_rank(sys_.A, tol=1e-10) == 1
        res = solve_constrained(sys_)
        assert not res.identifiable
        with pytest.raises(DegenerateSystem) as exc:
            solve_constrained(sys_, strict=True)
        assert exc.value.result is not None

    def test_zero_system_flags_uniform_rows(self):
        res = solve_constrained(NormalSystem(np.zeros((3, 3)), np.zeros((3, 3)), 1.0))
        assert res.flags[0] == "non-identifiable"
        assert "uniform-rows:0,1,2" in res.flags
        np.testing.assert_allclose(res.T_hat, 1 / 3)

    def test_identity_system(self):
        S = random_transition_matrix(4, np.random.default_rng(1))
        res = solve_constrained(NormalSystem(np.eye(4), S, 1.0))
        np.testing.assert_allclose(res.T_hat, S, atol=1e-14)
        assert res.lambda_min == pytest.approx(1.0)

    def test_ergodic_exact_system_with_long_enough_horizon(self):
        spec = ModelSpec(3, 3, 1)
        mu0 = Init.point([0, 0, 0]).distribution(spec)
        assert identifiability_report(exact_normal_system(spec, BENCHMARK_T, mu0, 2))["identifiable"]


class TestStationaryHessian:
    def test_rank_one_when_equal(self):
        p = np.array([0.6, 0.4])
        assert hessian_from_moments(p, p)["rank"] == 1

    def test_k2_heterogeneous_start_rank_two(self):
        spec = ModelSpec(2, 3, 1)
        mu0 = Init.point([0, 0, 1]).distribution(spec)
        p = marginal_of_pi(mu0, spec, 0)
        e_phi = np.einsum("s,sk->k", mu0, empirical_distributions(spec, all_configurations(spec))[:, 0])
        h = hessian_from_moments(p, e_phi)
        assert h["rank"] == 2 and h["identifiable"]


def test_threshold_and_error():
    T = np.array([[0.005, 0.995, 0.0], [0.0, 0.02, 0.98], [1.0, 0.0, 0.0]])
    out = threshold_matrix(T, 0.01)
    np.testing.assert_allclose(out, [[0, 1, 0], [0, 0.02, 0.98], [1, 0, 0]])
    assert relative_error(T, T) == 0.0
    with pytest.raises(ValueError):
        threshold_matrix(np.full((2, 2), 0.5), 0.9)


class TestCovariance:
    def test_deterministic_dynamics_zero_sigma(self):
        spec = ModelSpec(3, 4, 1)
        states = np.stack([simulate_trajectory(spec, cyclic_permutation(3), np.full(4, k), 6, np.random.default_rng(0))
                           for k in (0, 1, 2, 0, 1, 2)])
        ce = asymptotic_covariance_multitraj(traj_data(spec, states), T_ref=cyclic_permutation(3))
        np.testing.assert_allclose(ce.Sigma, 0, atol=1e-15)
        np.testing.assert_allclose(ce.covariances, 0, atol=1e-13)

    def test_degenerate_design_raises_with_estimate(self):
        spec = ModelSpec(3, 4, 1)
        states = np.stack([simulate_trajectory(spec, cyclic_permutation(3), np.zeros(4, int), 1, np.random.default_rng(0))] * 3)
        with pytest.raises(DegenerateSystem) as exc:
            asymptotic_covariance_multitraj(traj_data(spec, states))
        assert exc.value.result.covariances.shape == (3, 3, 3)

    def test_covariance_scales_inversely_with_M(self):
        spec = ModelSpec(2, 4, 1)
        T = np.array([[0.7, 0.3], [0.35, 0.65]])
        var = {}
        for M in (1000, 2000):
            est = [solve_constrained(assemble_multitraj(generate_multitraj(spec, T, Init.uniform(), M, 5, seed=M + r))).T_hat
                   for r in range(120)]
            var[M] = np.var(np.array(est)[:, :, 0], axis=0).sum()
        assert 1.4 <= var[1000] / var[2000] <= 2.8

    def test_sandwich_shape_and_symmetry(self):
        spec = ModelSpec(2, 4, 1)
        data = generate_multitraj(spec, [[0.7, 0.3], [0.35, 0.65]], Init.uniform(), 500, 5, seed=0)
        ce = asymptotic_covariance_multitraj(data)
        assert ce.covariances.shape == (2, 2, 2)
        for k in range(2):
            np.testing.assert_allclose(ce.covariances[k], ce.covariances[k].T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(ce.covariances[k]) >= -1e-12)
        with pytest.raises(ValueError):
            asymptotic_covariance_multitraj(data, centering="bogus")


class TestSampleSize:
    def test_branches(self):
        b = sample_size_bound(0.1, 0.05, 0.2, 1.2, 3)
        assert b.alpha == pytest.approx(0.005)
        assert b.s == pytest.approx(0.1 * min(1, 0.1 / 2.4))
        assert b.M_required > 0

    def test_ensemble_dominates_multi(self):
        for eps in (0.02, 0.1, 0.5):
            for delta in (0.01, 0.1, 0.5):
                for K, N, L in ((2, 2, 1), (3, 8, 20)):
                    if math.log(12 * N * L * K / delta) < math.log(6 * K * K / delta):
                        continue
                    m = sample_size_bound(eps, delta, 0.3, 1.1, K).M_required
                    e = sample_size_bound(eps, delta, 0.3, 1.1, K, "ensemble", N, L).M_required
                    assert e >= m

    def test_delta_near_one_is_finite(self):
        b = sample_size_bound(0.1, 1 - 1e-12, 0.2, 1.0, 2)
        assert math.isfinite(b.M_required) and b.M_required > 0

    @pytest.mark.parametrize("kw", [
        {"epsilon": 0.0}, {"epsilon": 1.0}, {"delta": 0.0}, {"delta": 1.0},
        {"lambda_min": 0.0}, {"frobenius_T": 0.0}, {"regime": "bogus"},
        {"regime": "ensemble"},
    ])
    def test_invalid(self, kw):
        args = dict(epsilon=0.1, delta=0.05, lambda_min=0.2, frobenius_T=1.0, K=2)
        args.update(kw)
        with pytest.raises(InvalidRange):
            sample_size_bound(**args)
