import math

import numpy as np
import pytest

from core.errors import ConfigurationError, UsageError
from core.schedule import (forward_marginal_params, make_cosine, make_linear, posterior_coeffs,
                           schedule_from_spec)

STEP_COUNTS = (10, 20, 30)


def _both(T):
    return [make_linear(T), make_cosine(T)]


class TestConstruction:

    @pytest.mark.parametrize('T', STEP_COUNTS)
    def test_linear_endpoints_exact(self, T):
        s = make_linear(T, 1e-4, 0.02)
        assert s.gamma[0] == 1e-4
        assert s.gamma[-1] == 0.02
        assert np.all(np.diff(s.gamma) > 0)

    @pytest.mark.parametrize('T', STEP_COUNTS)
    def test_ranges(self, T):
        for s in _both(T):
            assert s.delta_bar[0] == 1.0
            assert np.all((s.gamma > 0) & (s.gamma < 1))
            assert np.all(np.diff(s.delta_bar) < 0)
            assert 0.0 < s.delta_bar[-1] < 1.0

    def test_running_product_matches_loop(self):
        s = make_linear(10)
        product = 1.0
        for t in range(1, 11):
            product *= 1.0 - s.gamma[t - 1]
            assert s.delta_bar[t] == pytest.approx(product, abs=1e-15)
        assert forward_marginal_params(s, 10)[2] == pytest.approx(1.0 - product, abs=1e-15)

    def test_cosine_matches_direct_formula(self):
        s = make_cosine(10, 0.008)
        f = lambda t: math.cos(((t / 10 + 0.008) / 1.008) * math.pi / 2) ** 2
        for t in range(1, 10):
            assert s.gamma[t - 1] == pytest.approx(1.0 - f(t) / f(t - 1), abs=1e-12)
        # the last step hits the upper clip
        assert s.gamma[-1] == 0.999

    def test_cosine_clipped(self):
        s = make_cosine(10)
        assert s.gamma.max() <= 0.999
        assert s.gamma.min() >= 1e-8

    def test_arrays_are_read_only(self):
        s = make_linear(10)
        with pytest.raises(ValueError):
            s.gamma[0] = 0.5

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            make_linear(1)
        with pytest.raises(ConfigurationError):
            make_linear(10, 0.05, 0.01)
        with pytest.raises(ConfigurationError):
            make_cosine(10, s=0.0)
        with pytest.raises(ConfigurationError):
            schedule_from_spec({'type': 'quadratic', 'T': 10})

    def test_spec_round_trip(self):
        s = make_linear(20, 1e-4, 0.03)
        again = schedule_from_spec(s.to_dict())
        np.testing.assert_array_equal(again.gamma, s.gamma)


class TestPosterior:

    @pytest.mark.parametrize('T', STEP_COUNTS)
    def test_coefficients_sum_to_one(self, T):
        for s in _both(T):
            for t in range(1, T + 1):
                c = posterior_coeffs(s, t)
                # closed form of the g coefficient, independent of the other two
                root_bar, root_prev = math.sqrt(s.delta_bar[t]), math.sqrt(s.delta_bar[t - 1])
                lambda2 = 1.0 + (root_bar - 1.0) * (math.sqrt(s.delta[t - 1]) + root_prev) / (1.0 - s.delta_bar[t])
                assert c.lambda2 == pytest.approx(lambda2, abs=1e-12)
                assert abs(c.lambda0 + c.lambda1 + c.lambda2 - 1.0) <= 1e-12

    def test_first_step_collapses(self):
        for s in _both(10):
            c = posterior_coeffs(s, 1)
            assert c.lambda0 == pytest.approx(1.0, abs=1e-12)
            assert c.lambda1 == pytest.approx(0.0, abs=1e-12)
            assert c.lambda2 == pytest.approx(0.0, abs=1e-12)
            assert c.var == 0.0

    def test_out_of_range_timestep(self):
        s = make_linear(10)
        with pytest.raises(UsageError):
            posterior_coeffs(s, 0)
        with pytest.raises(UsageError):
            forward_marginal_params(s, 11)

    @pytest.mark.parametrize('kind', ['linear', 'cosine'])
    @pytest.mark.parametrize('t', [2, 5, 10])
    def test_matches_numerical_bayes(self, kind, t):
        """Grid posterior of one coordinate against the closed-form mean and variance."""
        s = make_linear(10) if kind == 'linear' else make_cosine(10)
        z0, g, z_t = 1.0, 0.3, 0.8
        prior_mean = math.sqrt(s.delta_bar[t - 1]) * z0 + (1.0 - math.sqrt(s.delta_bar[t - 1])) * g
        prior_var = 1.0 - s.delta_bar[t - 1]
        keep = math.sqrt(1.0 - s.gamma[t - 1])
        gamma = s.gamma[t - 1]

        c = posterior_coeffs(s, t)
        mean = c.lambda0 * z0 + c.lambda1 * z_t + c.lambda2 * g
        sd = math.sqrt(c.var)
        grid = np.linspace(mean - 12 * sd, mean + 12 * sd, 40001)
        log_density = (-(grid - prior_mean) ** 2 / (2 * prior_var)
                       - (z_t - keep * grid - (1.0 - keep) * g) ** 2 / (2 * gamma))
        density = np.exp(log_density - log_density.max())
        density /= np.trapz(density, grid)
        grid_mean = np.trapz(grid * density, grid)
        grid_var = np.trapz((grid - grid_mean) ** 2 * density, grid)

        assert grid_mean == pytest.approx(mean, abs=1e-6)
        assert grid_var == pytest.approx(c.var, rel=1e-6)


class TestMarginal:

    def test_marginal_params(self):
        s = make_cosine(10)
        a, b, var = forward_marginal_params(s, 4)
        assert a + b == pytest.approx(1.0)
        assert a ** 2 + var == pytest.approx(1.0)

    def test_status(self):
        status = make_linear(10).get_status()
        assert status['type'] == 'linear'
        assert status['T'] == 10
