import numpy as np
import pytest

from bsbl import (
    BlockPartition,
    BoConfig,
    EmConfig,
    Hyperparams,
    Problem,
    compute_posterior,
    cost_function,
    solve_bo,
    update_gamma_bo,
)

from conftest import dense_posterior_mxm, dense_sy_inv, random_instance, rel_err


class TestGammaRule:
    def test_zero_mean_gives_zero(self):
        prob = Problem([0.0, 0.0], np.eye(2))
        part = BlockPartition((2,))
        hp = Hyperparams([1.0], (np.eye(2),), 1.0)
        assert update_gamma_bo(prob, hp, part)[0] == 0.0

    def test_scalar_hand_value(self):
        # Sy = 2, mu = y / 2, denominator 1/2, so gamma = |mu| sqrt(2)
        prob = Problem([3.0], [[1.0]])
        hp = Hyperparams([1.0], (np.eye(1),), 1.0)
        assert update_gamma_bo(prob, hp, BlockPartition((1,)))[0] == pytest.approx(1.5 * np.sqrt(2), rel=1e-15)

    def test_dense_oracle(self, rng):
        prob, part, hp = random_instance(rng)
        mu, _ = dense_posterior_mxm(prob, part, hp)
        Syi = dense_sy_inv(prob, part, hp)
        want = []
        for i, s in enumerate(part.slices()):
            P = prob.phi[:, s]
            want.append(np.sqrt(mu[s] @ np.linalg.inv(hp.B[i]) @ mu[s] / np.trace(P.T @ Syi @ P @ hp.B[i])))
        assert rel_err(update_gamma_bo(prob, hp, part), want) < 1e-12

    def test_reuses_posterior(self, rng):
        prob, part, hp = random_instance(rng)
        post = compute_posterior(prob, part, hp)
        np.testing.assert_array_equal(update_gamma_bo(prob, hp, part, post), update_gamma_bo(prob, hp, part))

    def test_mm_descent(self, rng):
        for _ in range(10):
            prob, part, hp = random_instance(rng)
            new = update_gamma_bo(prob, hp, part)
            assert cost_function(prob, part, hp.replace(gamma=new)) <= cost_function(prob, part, hp) + 1e-9

    def test_fixed_point(self, rng):
        prob, part, hp = random_instance(rng, M=12, N=16)
        gamma = hp.gamma
        for _ in range(3000):
            new = update_gamma_bo(prob, hp.replace(gamma=gamma), part)
            if np.max(np.abs(new - gamma)) < 1e-13:
                break
            gamma = new
        again = update_gamma_bo(prob, hp.replace(gamma=gamma), part)
        np.testing.assert_allclose(again, gamma, atol=1e-10)


class TestSolver:
    def test_identity_exact(self):
        x = np.zeros(12)
        x[0:4] = [2.0, 1.0, -1.0, 0.5]
        res = solve_bo(Problem(x, np.eye(12)), [4, 4, 4], BoConfig.noiseless())
        assert np.sum((res.x_hat - x) ** 2) / np.sum(x ** 2) < 1e-10

    def test_default_max_iters(self):
        assert BoConfig().max_iters == 200 and EmConfig().max_iters == 500

    def test_descent_pairs(self, rng):
        prob, part, _ = random_instance(rng, M=20, N=40)
        res = solve_bo(prob, part, BoConfig(record_descent=True, max_iters=60))
        assert all(after <= before + 1e-9 for before, after in res.descent_pairs)

    def test_monotone_with_frozen_noise_and_b(self, rng):
        prob, part, _ = random_instance(rng, M=20, N=40)
        res = solve_bo(prob, part, BoConfig(learn_lambda="off", lambda_init=0.05, learn_correlation=False))
        assert np.max(np.diff(res.cost_trace)) <= 1e-9
