import numpy as np
import pytest

from chain_perturb import (
    BoundParams,
    SharpnessInstance,
    averaged_tv_bound,
    base_matrix,
    certify_tightness,
    cross_doeblin_constant,
    doeblin_constant,
    eigen_reconstruction,
    exact_averaged_tv,
    kernel_pair,
    local_epsilon,
    n_step_average_law,
    perturbed_matrix,
    perturbed_power_closed_form,
    tightness_table,
    tv_distance,
)


class TestClosedFormPowers:
    def test_power_zero_is_identity(self):
        inst = SharpnessInstance(beta=0.3, epsilon=0.1, gamma=0.9, n=1)
        np.testing.assert_allclose(perturbed_power_closed_form(inst, 0), np.eye(2), atol=1e-15)

    def test_power_one_is_the_matrix(self):
        inst = SharpnessInstance(beta=0.25, epsilon=0.1, gamma=0.9, n=1)
        np.testing.assert_allclose(
            perturbed_power_closed_form(inst, 1), perturbed_matrix(0.25, 0.1), atol=1e-15)

    def test_matches_repeated_multiplication(self):
        inst = SharpnessInstance(beta=0.25, epsilon=0.1, gamma=0.9, n=1)
        M = perturbed_matrix(0.25, 0.1)
        acc = np.eye(2)
        for k in range(11):
            np.testing.assert_allclose(perturbed_power_closed_form(inst, k), acc, atol=1e-12)
            acc = acc @ M


class TestFamilyConstants:
    @pytest.mark.parametrize("beta,eps", [(0.25, 0.1), (0.3, 0.05), (0.5, 0.2), (0.1, 0.1)])
    def test_exact_constants(self, beta, eps):
        P_eps, P = kernel_pair(beta, eps)
        assert doeblin_constant(P) == pytest.approx(2.0 * beta, abs=1e-15)
        assert local_epsilon(P_eps, P) == pytest.approx(eps, abs=1e-15)
        # the maximum is attained (not strictly below) at the off-diagonal pair
        assert cross_doeblin_constant(P_eps, P) == pytest.approx(2.0 * beta - eps, abs=1e-14)

    def test_eigen_reconstruction(self):
        for beta, eps in [(0.25, 0.1), (0.4, 0.3), (0.1, 0.05)]:
            np.testing.assert_allclose(
                eigen_reconstruction(beta, eps), perturbed_matrix(beta, eps), atol=1e-12)

    def test_kernel_pair_rejects_negative_entries(self):
        with pytest.raises(ValueError):
            kernel_pair(0.2, 0.3)


class TestExactAveragedTv:
    def test_single_step_is_initial_tv(self):
        inst = SharpnessInstance(beta=0.25, epsilon=0.1, gamma=1.0, n=1)
        assert exact_averaged_tv(inst) == pytest.approx(0.5, abs=1e-15)

    def test_long_horizon_limit(self):
        inst = SharpnessInstance(beta=0.25, epsilon=0.1, gamma=1.0, n=10 ** 7)
        assert exact_averaged_tv(inst) == pytest.approx(0.2, abs=1e-5)

    def test_balanced_start_constant_in_n(self):
        # gamma with initial TV equal to eps/(alpha+eps) kills the correction
        beta, eps = 0.25, 0.1
        gamma = 0.5 + eps / (2 * beta)
        for n in (1, 2, 7, 50):
            inst = SharpnessInstance(beta=beta, epsilon=eps, gamma=gamma, n=n)
            assert exact_averaged_tv(inst) == pytest.approx(eps / (2 * beta), abs=1e-15)

    def test_matches_numerical_tv(self):
        # direct simulation of the averaged law against the closed form
        for beta, eps, gamma, n in [(0.25, 0.1, 1.0, 7), (0.3, 0.05, 0.9, 23), (0.5, 0.2, 0.6, 3)]:
            inst = SharpnessInstance(beta=beta, epsilon=eps, gamma=gamma, n=n)
            P_eps, _ = kernel_pair(beta, eps)
            law = n_step_average_law([gamma, 1.0 - gamma], P_eps, n)
            assert exact_averaged_tv(inst) == pytest.approx(
                tv_distance([0.5, 0.5], law), abs=1e-12)

    def test_zero_perturbation_degenerate_form(self):
        beta, gamma, n = 0.25, 0.9, 12
        inst = SharpnessInstance(beta=beta, epsilon=0.0, gamma=gamma, n=n)
        expected = (gamma - 0.5) * (1.0 - (1.0 - 2 * beta) ** n) / (2 * beta * n)
        assert exact_averaged_tv(inst) == pytest.approx(expected, abs=1e-15)
        bound = averaged_tv_bound(BoundParams(epsilon=0.0, n=n, alpha=2 * beta, p0=gamma - 0.5))
        assert bound == pytest.approx(expected, abs=1e-15)


class TestTightness:
    def test_certificate_examples(self):
        for n in range(1, 101):
            ok, gap = certify_tightness(SharpnessInstance(beta=0.3, epsilon=0.05, gamma=0.9, n=n))
            assert ok and gap <= 1e-12
        ok, gap = certify_tightness(SharpnessInstance(beta=0.25, epsilon=0.1, gamma=1.0, n=50))
        assert ok and gap <= 1e-12

    def test_full_grid(self):
        for beta in (0.1, 0.2, 0.3, 0.4, 0.5):
            for eps in (0.01, beta / 2, 2 * beta - 0.01):
                for gamma in (0.6, 0.9, 1.0):
                    for n in (1, 2, 5, 10, 100):
                        inst = SharpnessInstance(beta=beta, epsilon=eps, gamma=gamma, n=n)
                        ok, gap = certify_tightness(inst)
                        assert ok, f"gap {gap} at {inst}"

    def test_table_shape(self):
        rows = tightness_table(0.3, 0.05, 0.9, 10)
        assert len(rows) == 10
        assert all(g <= 1e-12 for *_, g in rows)
        assert rows[0][0] == 1 and rows[-1][0] == 10


class TestInstanceValidation:
    def test_ranges(self):
        with pytest.raises(ValueError):
            SharpnessInstance(beta=0.6, epsilon=0.1, gamma=0.9, n=1)
        with pytest.raises(ValueError):
            SharpnessInstance(beta=0.25, epsilon=0.5, gamma=0.9, n=1)
        with pytest.raises(ValueError):
            SharpnessInstance(beta=0.25, epsilon=0.1, gamma=0.5, n=1)
        with pytest.raises(ValueError):
            SharpnessInstance(beta=0.25, epsilon=0.1, gamma=0.9, n=0)

    def test_base_matrix_is_symmetric_flip(self):
        np.testing.assert_allclose(base_matrix(0.25), [[0.75, 0.25], [0.25, 0.75]])
