import numpy as np
import pytest

from chain_perturb import (
    DimensionMismatchError,
    ExperimentConfig,
    StoppingRule,
    almost_sure_envelope_check,
    closeness_params,
    empirical_average_difference,
    empirical_base_tail,
    empirical_bounding_decoupling,
    empirical_decoupling,
    empirical_disagreement,
    empirical_path_law_distance,
    empirical_tail,
    expected_hitting_time,
    initial_disagreement_prob,
    kernel_pair,
    run_experiment,
    simulate_coupled_batch,
)
from helpers import random_pair

P_EPS, P = kernel_pair(0.25, 0.1)


def flip_config(n=100, replicates=500, seed=7, **kw):
    return ExperimentConfig(p_eps=P_EPS, p=P, n=n, replicates=replicates,
                            master_seed=seed, **kw)


class TestConfigAndParams:
    def test_closeness_params_of_flip_pair(self):
        params = closeness_params(flip_config(x0_eps=0, x0=1))
        assert params.epsilon == pytest.approx(0.1, abs=1e-15)
        assert params.alpha == pytest.approx(0.4, abs=1e-15)
        assert params.a == pytest.approx(0.5, abs=1e-15)
        assert params.p0 == 1.0

    def test_initial_disagreement_variants(self):
        assert initial_disagreement_prob(flip_config(x0_eps=1, x0=1)) == 0.0
        assert initial_disagreement_prob(flip_config(x0_eps=0, x0=1)) == 1.0
        cfg = flip_config(x0_eps=[1.0, 0.0], x0=[0.8, 0.2])
        assert initial_disagreement_prob(cfg) == pytest.approx(0.2, abs=1e-15)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            ExperimentConfig(p_eps=P_EPS, p=np.eye(3), n=5, replicates=1, master_seed=0)

    def test_observable_size_checked(self):
        with pytest.raises(DimensionMismatchError):
            flip_config(f=[0.0, 1.0, 2.0])


class TestExpectedHittingTime:
    def test_flip_chain_geometric(self):
        # from state 0 the first visit to 1 is geometric(beta)
        assert expected_hitting_time(P, [1], 0) == pytest.approx(4.0, abs=1e-12)

    def test_three_state_hand_instance(self):
        T = [[0.9, 0.1, 0.0], [0.5, 0.0, 0.5], [0.0, 0.1, 0.9]]
        np.testing.assert_allclose(expected_hitting_time(T, [0]), [0.0, 12.0, 22.0], atol=1e-10)

    def test_from_distribution(self):
        val = expected_hitting_time(P, [1], [0.5, 0.5])
        assert val == pytest.approx(0.5 * 4.0, abs=1e-12)

    def test_matches_simulation(self):
        rng = np.random.default_rng(2)
        P_eps, base = random_pair(rng, 5, 0.1)
        exact = expected_hitting_time(base, [4], 0)
        cfg = ExperimentConfig(p_eps=base, p=base, n=max(300, int(60 * exact)),
                               replicates=3000, master_seed=5, x0_eps=0, x0=0)
        batch = simulate_coupled_batch(cfg.p_eps, cfg.p, 0, 0, cfg.n, cfg.replicates, 5)
        hit = np.array([
            row.argmax() if row.any() else -1
            for row in (batch.x == 4)
        ])
        assert np.all(hit >= 0)
        se = hit.std(ddof=1) / np.sqrt(hit.size)
        assert abs(hit.mean() - exact) <= 3.0 * se

    def test_bad_targets(self):
        with pytest.raises(ValueError):
            expected_hitting_time(P, [], 0)
        with pytest.raises(ValueError):
            expected_hitting_time(P, [5], 0)


class TestEmpiricalDisagreement:
    def test_identical_kernels_zero(self):
        cfg = ExperimentConfig(p_eps=P, p=P, n=50, replicates=200, master_seed=1,
                               x0_eps=0, x0=0)
        res = empirical_disagreement(cfg)
        assert res.estimate == 0.0
        assert res.satisfied
        assert res.bound >= 0.0

    def test_flip_pair_satisfied(self):
        res = empirical_disagreement(flip_config(n=200, replicates=1000))
        assert res.satisfied
        assert res.replicates_used == 1000

    def test_stationary_start_occupation(self):
        # initial laws at TV = eps/(alpha+eps) start the dominating chain stationary
        cfg = flip_config(n=100, replicates=2000, x0_eps=[1.0, 0.0], x0=[0.8, 0.2])
        total = np.empty(2000)
        from chain_perturb import iter_coupled_batches
        for batch in iter_coupled_batches(cfg.p_eps, cfg.p, cfg.x0_eps, cfg.x0,
                                          cfg.n, cfg.replicates, cfg.master_seed):
            sl = slice(batch.first_index, batch.first_index + batch.n_traj)
            total[sl] = batch.y[:, :100].mean(axis=1)
        se = total.std(ddof=1) / np.sqrt(total.size)
        assert abs(total.mean() - 0.2) <= 3.0 * se

    def test_reproducible_bit_for_bit(self):
        r1 = empirical_disagreement(flip_config(n=80, replicates=300))
        r2 = empirical_disagreement(flip_config(n=80, replicates=300))
        assert r1.estimate == r2.estimate
        assert r1.std_error == r2.std_error


class TestEmpiricalAverageDifference:
    def test_constant_observable_zero(self):
        res = empirical_average_difference(flip_config(f=[3.0, 3.0], replicates=100, n=40))
        assert res.estimate == 0.0
        assert res.satisfied

    def test_identical_kernels_zero(self):
        cfg = ExperimentConfig(p_eps=P, p=P, n=40, replicates=100, master_seed=3,
                               x0_eps=0, x0=0, f=[0.0, 1.0])
        res = empirical_average_difference(cfg)
        assert res.estimate == 0.0

    def test_flip_pair_satisfied(self):
        res = empirical_average_difference(flip_config(f=[0.0, 1.0], n=150, replicates=800))
        assert res.satisfied

    def test_requires_observable(self):
        with pytest.raises(ValueError):
            empirical_average_difference(flip_config())


class TestEmpiricalTails:
    def test_huge_lambda_both_vanish(self):
        res = empirical_tail(flip_config(n=100, replicates=200), lam=50.0)
        assert res.estimate == 0.0
        assert res.bound <= 1e-100
        assert res.satisfied

    def test_flip_pair_lambda_two(self):
        res = empirical_tail(flip_config(n=400, replicates=800), lam=2.0)
        assert res.satisfied

    def test_base_tail_satisfied(self):
        res = empirical_base_tail(flip_config(f=[0.0, 1.0], n=400, replicates=800), lam=2.0)
        assert res.satisfied

    def test_run_experiment_dispatch(self):
        res = run_experiment("tail", flip_config(n=100, replicates=100), lam=3.0)
        assert res.name == "tail"
        with pytest.raises(ValueError):
            run_experiment("nonsense", flip_config())


class TestEmpiricalDecoupling:
    def test_deterministic_small_eps(self):
        pe, pb = kernel_pair(0.25, 0.01)
        cfg = ExperimentConfig(p_eps=pe, p=pb, n=20, replicates=2000, master_seed=11,
                               x0_eps=0, x0=0,
                               stopping=StoppingRule(kind="deterministic", time=20))
        res = empirical_decoupling(cfg)
        # per-step decoupling probability on the diagonal is exactly 0.01
        exact = 1.0 - 0.99 ** 20
        assert abs(res.estimate - exact) <= 3.0 * res.std_error + 1e-12
        assert res.satisfied

    def test_identical_kernels_never_decouple(self):
        cfg = ExperimentConfig(p_eps=P, p=P, n=30, replicates=300, master_seed=13,
                               x0_eps=0, x0=0,
                               stopping=StoppingRule(kind="deterministic", time=30))
        res = empirical_decoupling(cfg)
        assert res.estimate == 0.0
        assert res.satisfied

    def test_hitting_rule_satisfied(self):
        rng = np.random.default_rng(4)
        pe, pb = random_pair(rng, 5, 0.02)
        e_tau = expected_hitting_time(pb, [4], 0)
        cfg = ExperimentConfig(p_eps=pe, p=pb, n=int(50 * e_tau) + 1, replicates=2000,
                               master_seed=17, x0_eps=0, x0=0,
                               stopping=StoppingRule(kind="hitting", targets=(4,)))
        res = empirical_decoupling(cfg)
        assert res.satisfied

    def test_requires_equal_starts(self):
        cfg = flip_config(x0_eps=0, x0=1,
                          stopping=StoppingRule(kind="deterministic", time=10))
        with pytest.raises(ValueError):
            empirical_decoupling(cfg)

    def test_bounding_chain_exact_law(self):
        cfg = flip_config(n=50, replicates=3000,
                          stopping=StoppingRule(kind="deterministic", time=10))
        res = empirical_bounding_decoupling(cfg)
        exact = 1.0 - 0.9 ** 10
        assert abs(res.estimate - exact) <= 3.0 * res.std_error
        assert res.estimate <= 0.1 * 10 + 3.0 * res.std_error  # linear cap


class TestEmpiricalPathLaw:
    def test_identical_kernels_small(self):
        cfg = ExperimentConfig(p_eps=P, p=P, n=10, replicates=3000, master_seed=19,
                               x0_eps=0, x0=0,
                               stopping=StoppingRule(kind="hitting", targets=(1,)))
        res = empirical_path_law_distance(cfg)
        assert res.bound == 0.0
        assert res.estimate <= 0.08  # plug-in TV bias at this replicate count
        assert res.satisfied

    def test_flip_pair_satisfied(self):
        cfg = flip_config(n=10, replicates=3000,
                          stopping=StoppingRule(kind="hitting", targets=(1,)))
        res = empirical_path_law_distance(cfg)
        assert res.satisfied
        assert res.bound == pytest.approx(0.4, abs=1e-12)

    def test_vacuous_bound_trivially_satisfied(self):
        pe, pb = kernel_pair(0.25, 0.25)  # absorbing perturbed chain: laws far apart
        cfg = ExperimentConfig(p_eps=pe, p=pb, n=10, replicates=500, master_seed=23,
                               x0_eps=0, x0=0,
                               stopping=StoppingRule(kind="hitting", targets=(1,)))
        with pytest.warns(RuntimeWarning):
            res = empirical_path_law_distance(cfg)
        assert res.bound == 1.0
        assert res.satisfied


class TestEnvelope:
    def test_flip_pair_stabilizes(self):
        cfg = flip_config(n=30_000, replicates=6)
        report = almost_sure_envelope_check(cfg)
        assert report.stabilized.all()
        assert report.grid[-1] == 30_000

    def test_identical_kernels_nonpositive(self):
        cfg = ExperimentConfig(p_eps=P, p=P, n=30_000, replicates=3, master_seed=29,
                               x0_eps=0, x0=0)
        report = almost_sure_envelope_check(cfg)
        assert np.all(report.stats <= 0.0)

    def test_bounding_chain_variant(self):
        cfg = flip_config(n=30_000, replicates=3)
        report = almost_sure_envelope_check(cfg, use_bounding=True)
        assert report.stabilized.all()

    def test_short_horizon_rejected(self):
        with pytest.raises(ValueError):
            almost_sure_envelope_check(flip_config(n=500, replicates=2))
