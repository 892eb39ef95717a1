import json
import warnings

import numpy as np
import pytest

from epsoracle import distributions as D
from epsoracle import oracle as O
from epsoracle import trainer as TR
from epsoracle.schedule import build_linear_schedule


def oracle_fn(dist, s, t):
    return lambda x: O.epsilon_star(dist, s, t, x)


class TestGridFit:
    def test_dirac_nodes_follow_affine_law(self, sched100):
        c, t = 1.0, 50
        ab = sched100.alpha_bar(t)
        pred, rep = TR.fit_least_squares(TR.GridSpec(resolution=41), D.Discrete([[c]], [1.0]), sched100, t,
                                         200_000, np.random.default_rng(0))
        nodes = np.linspace(pred.lower[0], pred.upper[0], 41)
        expect = (nodes - np.sqrt(ab) * c) / np.sqrt(1 - ab)
        populated = ~pred.flagged
        populated[[0, -1]] = False  # one-sided tents at the box edge
        assert np.max(np.abs(pred.values[populated, 0] - expect[populated])) <= 0.05
        assert rep.n_samples == 200_000 and rep.family == "grid"

    @pytest.mark.parametrize("t", [10, 50, 100])
    def test_standard_normal_rmse_gate(self, std_normal, sched100, t):
        _, rep = TR.fit_least_squares(TR.GridSpec(), std_normal, sched100, t, 200_000, np.random.default_rng(t))
        assert rep.comparison.rmse <= 0.05
        assert rep.comparison.n_region > 0.9 * rep.comparison.n_eval

    def test_more_data_helps(self, gmm3, sched100):
        def median_rmse(n):
            return np.median([
                TR.fit_least_squares(TR.GridSpec(), gmm3, sched100, 40, n, np.random.default_rng(seed))[1]
                .comparison.rmse
                for seed in range(5)
            ])

        assert median_rmse(40_000) < median_rmse(20_000)

    def test_undersampled(self, gmm3, sched100, rng):
        with pytest.raises(TR.UndersampledError):
            TR.fit_least_squares(TR.GridSpec(resolution=65), gmm3, sched100, 10, 500, rng)

    def test_box_missing_data_is_an_error(self, gmm3, sched100, rng):
        with pytest.raises(ValueError):
            TR.fit_least_squares(TR.GridSpec(resolution=9, lower=(50.0,), upper=(60.0,)), gmm3, sched100, 10,
                                 1000, rng)

    def test_empty_nodes_filled_and_flagged(self, twopoint, sched100, rng):
        spec = TR.GridSpec(resolution=201, lower=(-1.2,), upper=(1.2,))
        pred, rep = TR.fit_least_squares(spec, twopoint, sched100, 1, 20_000, rng, n_eval=None)
        assert rep.n_flagged > 0 and pred.flagged[100]  # nothing lands near 0 at t=1
        assert np.all(np.isfinite(pred.values))
        assert pred.in_flagged_cell([[0.0]])[0]
        assert not pred.in_flagged_cell([[1.0]])[0]

    def test_evaluates_everywhere(self, gmm3, sched100, rng):
        pred, _ = TR.fit_least_squares(TR.GridSpec(), gmm3, sched100, 30, 20_000, rng, n_eval=None)
        inside = pred([[pred.lower[0]]])
        assert np.allclose(pred([[-1e6]]), inside)
        assert pred(np.array([0.1])).shape == (1,)

    def test_two_dimensional(self, gmm2d, sched100, rng):
        pred, rep = TR.fit_least_squares(TR.GridSpec(), gmm2d, sched100, 100, 1_000_000, rng, n_eval=5000)
        assert pred.values.shape[-1] == 2 and pred.values.ndim == 3
        assert rep.comparison.rmse <= 0.05

    def test_serialisation_round_trip(self, gmm3, sched100, rng):
        pred, _ = TR.fit_least_squares(TR.GridSpec(resolution=17), gmm3, sched100, 30, 5000, rng, n_eval=None)
        again = TR.predictor_from_dict(json.loads(json.dumps(pred.to_dict())))
        x = rng.standard_normal((20, 1))
        np.testing.assert_array_equal(pred(x), again(x))
        assert again.t == 30


class TestRBFFit:
    def test_standard_normal(self, std_normal, sched100):
        _, rep = TR.fit_least_squares(TR.RBFSpec(), std_normal, sched100, 50, 200_000, np.random.default_rng(1))
        assert rep.comparison.rmse <= 0.05
        assert rep.ridge == pytest.approx(1e-8)

    def test_singular_normal_equations_warn(self, std_normal, sched100, rng):
        with pytest.warns(RuntimeWarning, match="ridge"):
            pred, rep = TR.fit_least_squares(TR.RBFSpec(bandwidth=1e3, ridge=0.0), std_normal, sched100, 50,
                                             20_000, rng, n_eval=None)
        assert rep.ridge > 0

    def test_serialisation_round_trip(self, gmm3, sched100, rng):
        pred, _ = TR.fit_least_squares(TR.RBFSpec(n_centers=10), gmm3, sched100, 30, 5000, rng, n_eval=None)
        again = TR.predictor_from_dict(pred.to_dict())
        x = rng.standard_normal((20, 1))
        np.testing.assert_allclose(pred(x), again(x), rtol=1e-15)


class TestCompareToOracle:
    def test_oracle_is_exact(self, gmm3, sched100, rng):
        cmp = TR.compare_to_oracle(oracle_fn(gmm3, sched100, 40), gmm3, sched100, 40, 2000, rng)
        assert cmp.rmse == 0.0 and cmp.rmse_all == 0.0
        assert len(cmp.rmse_by_decile) == 10

    @pytest.mark.parametrize("t", [20, 80])
    def test_zero_predictor_on_standard_normal(self, std_normal, sched100, t):
        cmp = TR.compare_to_oracle(lambda x: np.zeros_like(x), std_normal, sched100, t, 50_000,
                                   np.random.default_rng(t))
        # E[x_t^2] = 1, so the RMSE is sqrt(1 - ab); sd of sqrt(mean x^2) ~ sqrt(1/(2n))
        assert cmp.rmse_all == pytest.approx(np.sqrt(1 - sched100.alpha_bar(t)), rel=4 * np.sqrt(0.5 / 50_000))

    def test_needs_enough_points(self, gmm3, sched100, rng):
        with pytest.raises(ValueError):
            TR.compare_to_oracle(lambda x: x, gmm3, sched100, 10, 999, rng)


class TestStationarity:
    def test_zero_at_oracle(self, gmm2d, sched100, rng):
        x = O.draw_probes(gmm2d, sched100, 40, 100, rng)
        g = TR.stationarity_residual(oracle_fn(gmm2d, sched100, 40), gmm2d, sched100, 40, x)
        assert np.max(np.abs(g)) == 0.0

    def test_constant_offset(self, gmm3, sched100, rng):
        c = 0.25
        x = O.draw_probes(gmm3, sched100, 40, 50, rng)
        f = oracle_fn(gmm3, sched100, 40)
        g = TR.stationarity_residual(lambda z: f(z) + c, gmm3, sched100, 40, x)
        q = np.exp(D.log_density(D.marginal_qt(gmm3, sched100, 40), x))
        np.testing.assert_allclose(g[:, 0], -q * c, rtol=1e-12)

    def test_fit_report_summary(self, gmm3, sched100, rng):
        _, rep = TR.fit_least_squares(TR.GridSpec(), gmm3, sched100, 40, 200_000, rng)
        assert 0 < rep.stationarity_mean_norm < 0.05
        assert json.dumps(rep.to_dict())


class TestGateaux:
    S_VALUES = [-0.2, -0.1, -0.05, 0.05, 0.1, 0.2]

    def test_linear_term_vanishes_at_oracle(self, gmm3, sched100):
        rng = np.random.default_rng(11)
        f = oracle_fn(gmm3, sched100, 50)
        reports = [
            TR.gateaux_derivative_check(f, TR.random_perturbation(1, rng), gmm3, sched100, 50, self.S_VALUES,
                                        20_000, rng)
            for _ in range(10)
        ]
        assert sum(r.linear_is_zero() for r in reports) >= 9
        assert all(r.quadratic > 0 for r in reports)

    def test_shifted_predictor_has_positive_slope(self, gmm3, sched100):
        rng = np.random.default_rng(12)
        f = oracle_fn(gmm3, sched100, 50)
        for _ in range(5):
            h = TR.random_perturbation(1, rng)
            rep = TR.gateaux_derivative_check(lambda x: f(x) + 0.5 * h(x), h, gmm3, sched100, 50, self.S_VALUES,
                                              20_000, rng)
            # F(s) = E|r - (s - 0.5) h|^2 with r the oracle residual: slope 2 * 0.5 * E|h|^2
            assert rep.linear > 0 and not rep.linear_is_zero()
            assert rep.linear == pytest.approx(rep.quadratic, abs=5 * rep.linear_stderr + 5 * rep.quadratic_stderr)

    def test_quadratic_term_is_mean_square_of_direction(self, std_normal, sched100):
        rng = np.random.default_rng(13)
        h = TR.random_perturbation(1, rng)
        rep = TR.gateaux_derivative_check(oracle_fn(std_normal, sched100, 30), h, std_normal, sched100, 30,
                                          self.S_VALUES, 50_000, np.random.default_rng(14))
        x = O.draw_probes(std_normal, sched100, 30, 50_000, np.random.default_rng(14))
        expect = np.mean(np.sum(h(x) ** 2, axis=1))
        assert rep.quadratic == pytest.approx(expect, rel=0.05)

    def test_noiseless_case_uses_rounding_floor(self, sched100):
        dist = D.Discrete([[1.0]], [1.0])
        rng = np.random.default_rng(15)
        rep = TR.gateaux_derivative_check(oracle_fn(dist, sched100, 50), TR.random_perturbation(1, rng), dist,
                                          sched100, 50, self.S_VALUES, 5000, rng)
        assert abs(rep.linear) < 1e-12 and rep.linear_is_zero()

    def test_s_values_must_be_symmetric(self, gmm3, sched100, rng):
        with pytest.raises(ValueError):
            TR.gateaux_derivative_check(lambda x: x, lambda x: x, gmm3, sched100, 5, [0.1, 0.2, 0.3], 100, rng)
