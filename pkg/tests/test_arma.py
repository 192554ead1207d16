import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cprain.arma import (LocationData, ModelParams, log_likelihood, ma_residual_amount,
                         ma_residual_count, n_params, unroll)
from cprain.errors import DataError, DivergenceError


def reference_unroll(theta: ModelParams, x, y, z):
    """Plain-Python recursion written directly from the model definition."""
    n = len(y)
    log_lam, log_mu, lam, mu = [0.0] * n, [0.0] * n, [0.0] * n, [0.0] * n
    omega = [math.exp(float(np.dot(theta.beta_omega, x[t])) + theta.k_omega) for t in range(n)]
    for t in range(n):
        a = float(np.dot(theta.beta_lambda, x[t])) + theta.k_lambda
        b = float(np.dot(theta.beta_mu, x[t])) + theta.k_mu
        for i in range(1, theta.p + 1):
            if t - i >= 0:
                a += theta.phi_lambda[i - 1] * (log_lam[t - i] - theta.k_lambda)
                b += theta.phi_mu[i - 1] * (log_mu[t - i] - theta.k_mu)
        for i in range(1, theta.q + 1):
            if t - i >= 0:
                s = t - i
                a += theta.gamma_lambda[i - 1] * (z[s] - lam[s]) / math.sqrt(lam[s])
                if z[s] > 0:
                    b += theta.gamma_mu[i - 1] * (y[s] - z[s] * mu[s]) / (mu[s] * math.sqrt(z[s] * omega[s]))
        log_lam[t], log_mu[t] = a, b
        lam[t], mu[t] = math.exp(a), math.exp(b)
    return np.array(lam), np.array(mu), np.array(omega)


def reference_loglik(lam, mu, omega, y, z):
    total = 0.0
    for t in range(len(y)):
        total += stats.poisson.logpmf(z[t], lam[t])
        if z[t] > 0:
            total += stats.gamma.logpdf(y[t], a=z[t] / omega[t], scale=omega[t] * mu[t])
    return total


@pytest.fixture
def theta22():
    return ModelParams(-0.2, 1.0, -0.3, [0.3, -0.1], [0.2, 0.05], [0.1, -0.2],
                       [0.3, -0.1], [0.2, 0.1], [0.15, 0.05], [0.1, -0.05])


class TestModelParams:
    def test_layout(self, theta22):
        v = theta22.to_vector()
        assert v.size == n_params(2, 2, 2) == 3 + 6 + 4 + 4
        assert list(v[:3]) == [-0.2, 1.0, -0.3]
        assert list(v[3:5]) == [0.3, -0.1]
        assert list(v[-2:]) == [0.1, -0.05]
        assert len(ModelParams.labels(2, 2, 2)) == v.size

    @settings(max_examples=50, deadline=None)
    @given(r=st.integers(0, 3), p=st.integers(0, 3), q=st.integers(0, 3), seed=st.integers(0, 10**6))
    def test_vector_round_trip(self, r, p, q, seed):
        v = np.random.default_rng(seed).standard_normal(n_params(r, p, q))
        back = ModelParams.from_vector(v, r, p, q)
        assert back.dims == (r, p, q)
        np.testing.assert_array_equal(back.to_vector(), v)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            ModelParams.from_vector(np.zeros(5), 1, 1, 1)

    def test_mismatched_blocks(self):
        with pytest.raises(ValueError):
            ModelParams(0, 0, 0, [1, 2], [1], [1, 2], [], [], [], [])


class TestLocationData:
    def test_rejects_negative_rain(self):
        with pytest.raises(DataError):
            LocationData(np.zeros((3, 1)), [0.0, -1.0, 2.0])

    def test_rejects_missing(self):
        with pytest.raises(DataError):
            LocationData(np.array([[0.0], [np.nan]]), [0.0, 1.0])

    def test_rejects_misaligned(self):
        with pytest.raises(DataError):
            LocationData(np.zeros((4, 1)), [0.0, 1.0])

    def test_standardisation_warning(self):
        assert LocationData(np.full((5, 1), 2.0), np.zeros(5)).standardisation_warning()
        assert not LocationData(np.zeros((5, 1)), np.zeros(5)).standardisation_warning()


class TestResiduals:
    def test_count(self):
        assert ma_residual_count(3, 4.0) == pytest.approx(-0.5)

    def test_amount_dry_day_is_zero(self):
        assert ma_residual_amount(0.0, 0, 2.0, 1.5) == 0.0

    def test_amount(self):
        assert ma_residual_amount(5.0, 2, 2.0, 0.5) == pytest.approx(1.0 / 2.0)

    def test_amount_with_underflowing_scale(self):
        # mu * sqrt(omega) underflows to zero; the residual must not divide by it
        assert ma_residual_amount(1.0, 1, 1e-200, 1e-250) == math.inf
        assert ma_residual_amount(1e-200, 1, 1e-200, 1e-250) == 0.0

    def test_degenerate_dispersion_has_no_likelihood(self):
        # omega is a positive subnormal, so the Gamma shape overflows
        theta = ModelParams.constant(0.0, 0.0, -740.0)
        data = LocationData(np.zeros((3, 0)), [0.0, 2.0, 1.0])
        assert log_likelihood(theta, data, [0, 1, 1]) == -math.inf


class TestRecursion:
    def test_matches_reference(self, theta22, rng):
        n = 40
        x = rng.standard_normal((n, 2))
        z = rng.poisson(1.0, n)
        y = np.where(z > 0, rng.gamma(np.maximum(z, 1), 1.5), 0.0)
        data = LocationData(x, y)
        series = unroll(theta22, data, z)
        lam, mu, omega = reference_unroll(theta22, x, y, z)
        np.testing.assert_allclose(series.lam, lam, rtol=1e-12)
        np.testing.assert_allclose(series.mu, mu, rtol=1e-12)
        np.testing.assert_allclose(series.omega, omega, rtol=1e-12)
        assert log_likelihood(theta22, data, z) == pytest.approx(
            reference_loglik(lam, mu, omega, y, z), rel=1e-11)

    def test_three_day_hand_case(self):
        theta = ModelParams(0.0, 0.0, 0.0, [], [], [], [0.5], [0.5], [1.0], [1.0])
        data = LocationData(np.zeros((3, 0)), [0.0, 2.0, 1.0])
        s = unroll(theta, data, [0, 2, 1])
        # day 0: no history -> lam = mu = 1
        # day 1: AR terms vanish (log 1 = k), MA count (0-1)/1 = -1, amount 0 on a dry day
        # day 2: AR 0.5*(-1) = -0.5 and MA (2-e^-1)/sqrt(e^-1); amount residual (2-2)/... = 0
        l1 = math.exp(-1.0)
        assert s.lam[0] == 1.0 and s.mu[0] == 1.0
        assert s.lam[1] == pytest.approx(l1)
        assert s.mu[1] == 1.0
        assert s.lam[2] == pytest.approx(math.exp(-0.5 + (2 - l1) / math.sqrt(l1)))
        assert s.mu[2] == pytest.approx(1.0)

    def test_zero_coefficients_give_constant_parameters(self, rng):
        theta = ModelParams.constant(-0.5, 1.0, 0.2, n_inputs=2, p=2, q=3)
        z = rng.poisson(0.6, 50)
        y = np.where(z > 0, 1.0 + z, 0.0)
        s = unroll(theta, LocationData(rng.standard_normal((50, 2)), y), z)
        np.testing.assert_allclose(s.lam, math.exp(-0.5), rtol=1e-14)
        np.testing.assert_allclose(s.mu, math.exp(1.0), rtol=1e-14)
        np.testing.assert_allclose(s.omega, math.exp(0.2), rtol=1e-14)

    def test_explosive_ar_diverges_with_index(self):
        theta = ModelParams(1.0, 0.0, 0.0, [1.0], [0.0], [0.0], [3.0], [0.0], [], [])
        n = 400
        x = np.zeros((n, 1))
        x[0] = 1.0  # one-off kick that the AR term then triples every day
        with pytest.raises(DivergenceError) as info:
            unroll(theta, LocationData(x, np.zeros(n)), np.zeros(n, int))
        # log lam_t = 1 + 3**t first exceeds log(max double) ~ 709.8 at t = 6
        assert info.value.index == 6

    def test_inconsistent_pair_has_zero_likelihood(self, theta22, rng):
        x = rng.standard_normal((5, 2))
        y = np.array([0.0, 1.0, 0.0, 2.0, 0.0])
        assert log_likelihood(theta22, LocationData(x, y), [0, 0, 0, 1, 0]) == -math.inf
        assert log_likelihood(theta22, LocationData(x, y), [1, 1, 0, 1, 0]) == -math.inf

    def test_input_count_mismatch(self, theta22):
        with pytest.raises(DataError):
            unroll(theta22, LocationData(np.zeros((3, 1)), np.zeros(3)), np.zeros(3, int))
