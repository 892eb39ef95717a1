import numpy as np
import pytest

from epsoracle import bruteforce as B
from epsoracle import distributions as D
from epsoracle import oracle as O
from epsoracle.schedule import NoiseSchedule


class TestQuadrature:
    def test_tight_gaussian_matches_dirac_limit(self, sched100):
        dist = D.GaussianMixture([1.0], [[0.8]], [[[1e-6]]])
        for t in (1, 50, 100):
            for x in (0.2, 0.9, 1.5):
                q = B.epsilon_star_quadrature(dist, sched100, t, [x])
                closed = O.epsilon_star(dist, sched100, t, [x])
                assert q.value[0] == pytest.approx(closed[0], rel=1e-6)

    @pytest.mark.parametrize("t", [1, 25, 100])
    def test_standard_normal(self, std_normal, sched100, t):
        for x in (-2.5, 0.3, 1.1):
            q = B.epsilon_star_quadrature(std_normal, sched100, t, [x])
            assert q.value[0] == pytest.approx(np.sqrt(1 - sched100.alpha_bar(t)) * x, abs=1e-8)

    def test_gmm3_random_probes(self, gmm3, sched100, rng):
        for t in rng.integers(1, 101, 20):
            x = O.draw_probes(gmm3, sched100, int(t), 1, rng)[0]
            q = B.epsilon_star_quadrature(gmm3, sched100, int(t), x)
            closed = O.epsilon_star(gmm3, sched100, int(t), x)
            assert abs(q.value[0] - closed[0]) <= 1e-6 * abs(closed[0])
            assert q.bound < 1e-10 and not q.coarse

    def test_two_dimensional(self, gmm2d, sched100, rng):
        for t in (1, 50, 100):
            x = O.draw_probes(gmm2d, sched100, t, 3, rng)
            for xi in x:
                q = B.epsilon_star_quadrature(gmm2d, sched100, t, xi)
                closed = O.epsilon_star(gmm2d, sched100, t, xi)
                assert np.max(np.abs(q.value - closed)) <= 1e-4 * np.max(np.abs(closed))

    def test_discrete_is_exact_sum(self, twopoint):
        s = NoiseSchedule([0.64])
        q = B.epsilon_star_quadrature(twopoint, s, 1, [0.5])
        assert q.value[0] == pytest.approx(0.29710841114371575711, abs=1e-15)
        assert q.bound == 0.0 and q.n_evals == 2

    def test_coarse_grid_flagged(self, gmm2d, sched100):
        # correlated 2-D components: per-component grid errors no longer cancel in the ratio
        q = B.epsilon_star_quadrature(gmm2d, sched100, 60, [0.3, 0.0], nodes=9, tol=1e-6)
        assert q.coarse and q.bound > 1e-6
        q = B.epsilon_star_quadrature(gmm2d, sched100, 60, [0.3, 0.0], nodes=33, tol=1e-6)
        assert not q.coarse

    def test_guards(self, gmm3, sched100):
        g3 = D.GaussianMixture([1.0], [np.zeros(3)], [np.eye(3)])
        with pytest.raises(ValueError):
            B.epsilon_star_quadrature(g3, sched100, 5, np.zeros(3))
        with pytest.raises(ValueError):
            B.epsilon_star_quadrature(gmm3, sched100, 5, [0.0], nodes=64)
        with pytest.raises(ValueError):
            B.epsilon_star_quadrature(gmm3, sched100, 5, [0.0, 1.0])


class TestMonteCarlo:
    def test_dirac_exact(self, sched100, rng):
        dist = D.Discrete([[1.0]], [1.0])
        est = B.epsilon_star_monte_carlo(dist, sched100, 40, [0.3], 100, rng)
        assert est.value[0] == pytest.approx(O.epsilon_star(dist, sched100, 40, [0.3])[0], abs=1e-14)
        assert est.stderr[0] == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("t", [10, 50, 100])
    def test_standard_normal_within_four_stderr(self, std_normal, sched100, rng, t):
        x = 0.8
        est = B.epsilon_star_monte_carlo(std_normal, sched100, t, [x], 100_000, rng)
        truth = np.sqrt(1 - sched100.alpha_bar(t)) * x
        assert abs(est.value[0] - truth) <= 4 * est.stderr[0]
        assert not est.unreliable

    def test_far_tail_flags_ess_collapse(self, std_normal, sched100, rng):
        est = B.epsilon_star_monte_carlo(std_normal, sched100, 1, [12.0], 1000, rng)
        assert est.ess < 10 and est.unreliable

    def test_coverage_rate(self, gmm3, sched100):
        rng = np.random.default_rng(99)
        hits = []
        for t in (5, 30, 70, 100):
            for x in O.draw_probes(gmm3, sched100, t, 25, rng):
                est = B.epsilon_star_monte_carlo(gmm3, sched100, t, x, 20_000, rng)
                hits.append(abs(est.value[0] - O.epsilon_star(gmm3, sched100, t, x)[0]) <= 4 * est.stderr[0])
        assert np.mean(hits) >= 0.97

    def test_requires_100_samples(self, gmm3, sched100, rng):
        with pytest.raises(ValueError):
            B.epsilon_star_monte_carlo(gmm3, sched100, 5, [0.0], 99, rng)


class TestFiniteDifference:
    def test_standard_normal(self, rng):
        g = D.GaussianMixture([1.0], [np.zeros(2)], [np.eye(2)])
        x = rng.standard_normal((10, 2))
        np.testing.assert_allclose(B.score_finite_difference(g, x, 1e-3), -x, atol=1e-9)

    def test_quadratic_exactness(self, rng):
        # a single Gaussian has a quadratic log-density, so only rounding error remains
        g = D.GaussianMixture([1.0], [[0.5, -0.3]], [[[0.6, 0.1], [0.1, 0.2]]])
        x = rng.standard_normal(2)
        np.testing.assert_allclose(B.score_finite_difference(g, x, 0.1), D.score(g, x), atol=1e-12)

    def test_random_gmm(self, gmm2d, sched100, rng):
        g = D.marginal_qt(gmm2d, sched100, 20)
        x = D.sample(g, rng, 50)
        a, fd = D.score(g, x), B.score_finite_difference(g, x, 1e-5)
        err = np.max(np.abs(a - fd), axis=1) / np.max(np.abs(a), axis=1)
        assert np.all(err <= 1e-5)

    def test_rejects_nonpositive_step(self, gmm3):
        with pytest.raises(ValueError):
            B.score_finite_difference(gmm3, [0.0], 0.0)


class TestLoss:
    def test_zero_predictor_second_moment(self, std_normal, sched100, rng):
        val, se = B.loss_functional(lambda x: np.zeros_like(x), std_normal, sched100, 50, 100_000, rng)
        assert abs(val - 1.0) <= 4 * se

    def test_oracle_beats_zero(self, gmm3, sched100):
        oracle = lambda x: O.epsilon_star(gmm3, sched100, 50, x)  # noqa: E731
        l_opt, se1 = B.loss_functional(oracle, gmm3, sched100, 50, 50_000, np.random.default_rng(3))
        l_zero, se2 = B.loss_functional(lambda x: np.zeros_like(x), gmm3, sched100, 50, 50_000,
                                        np.random.default_rng(3))
        assert l_opt < l_zero - 4 * np.hypot(se1, se2)

    def test_constant_offset_excess(self, gmm3, sched100):
        t, c = 60, 0.3
        oracle = lambda x: O.epsilon_star(gmm3, sched100, t, x)  # noqa: E731
        l_opt, se = B.loss_functional(oracle, gmm3, sched100, t, 100_000, np.random.default_rng(4))
        l_off, _ = B.loss_functional(lambda x: oracle(x) + c, gmm3, sched100, t, 100_000,
                                     np.random.default_rng(4))
        # same draws: the difference is c^2 - 2c * mean(eps - eps*), whose sd is 2c*sqrt(var/n)
        assert l_off - l_opt == pytest.approx(c**2, abs=4 * 2 * c * se)

    def test_needs_samples(self, gmm3, sched100, rng):
        with pytest.raises(ValueError):
            B.loss_functional(lambda x: x, gmm3, sched100, 5, 0, rng)
