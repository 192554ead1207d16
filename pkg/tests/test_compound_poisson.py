import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import logsumexp

from cprain.compound_poisson import (MAX_TERMS, TERM_TOL, CpParams, cp_log_density, cp_mean,
                                     cp_posterior_z_expectation, cp_sample, cp_term_range,
                                     cp_variance, cp_z_log_conditional, log_terms)
from cprain.errors import DomainError, SeriesFailure

GRID = [CpParams(lam, mu, omega) for lam in (0.1, 1, 5) for mu in (0.5, 2, 10)
        for omega in (0.2, 1, 3)]
Y_VALUES = (0.01, 0.1, 1.0, 5.0, 20.0, 100.0)


def brute_terms(y, p, n=MAX_TERMS):
    """Series terms from scipy's Poisson and Gamma laws, z = 1..n."""
    z = np.arange(1, n + 1)
    return (stats.poisson.logpmf(z, p.lam)
            + stats.gamma.logpdf(y, a=z / p.omega, scale=p.omega * p.mu))


class TestParams:
    @pytest.mark.parametrize("bad", [(0, 1, 1), (1, -1, 1), (1, 1, math.inf), (math.nan, 1, 1)])
    def test_invalid(self, bad):
        with pytest.raises(DomainError):
            CpParams(*bad)

    def test_moments(self):
        p = CpParams(2.0, 3.0, 0.5)
        assert cp_mean(p) == pytest.approx(6.0)
        assert cp_variance(p) == pytest.approx(2.0 * 9.0 * 1.5)


class TestDensity:
    def test_zero_is_poisson_atom(self):
        assert cp_log_density(0.0, CpParams(2.0, 1.0, 1.0)) == -2.0

    def test_hand_case_against_500_terms(self):
        p = CpParams(1.0, 1.0, 1.0)
        ref = logsumexp(brute_terms(1.5, p, 500))
        assert cp_log_density(1.5, p) == pytest.approx(ref, abs=1e-10)

    @pytest.mark.parametrize("p", GRID[::4])
    @pytest.mark.parametrize("y", [0.01, 5.0, 100.0])
    def test_matches_brute_force(self, p, y):
        assert cp_log_density(y, p) == pytest.approx(logsumexp(brute_terms(y, p)), abs=1e-10)

    def test_normalises(self):
        p = CpParams(0.8, 3.0, 0.7)
        mean, sd = cp_mean(p), math.sqrt(cp_variance(p))
        f = lambda y: math.exp(cp_log_density(y, p))
        a, _ = integrate.quad(f, 0, mean, limit=200, epsabs=1e-12)
        b, _ = integrate.quad(f, mean, mean + 60 * sd, limit=200, epsabs=1e-12)
        assert math.exp(-p.lam) + a + b == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("y", [-1.0, math.nan, math.inf])
    def test_bad_y(self, y):
        with pytest.raises(DomainError):
            cp_log_density(y, CpParams(1, 1, 1))


class TestTermRange:
    def test_tiny_rainfall_window_starts_at_one(self):
        p = CpParams(1.0, 1.0, 1.0)
        z_lo, z_hi = cp_term_range(0.01, p)
        terms = log_terms(np.arange(1, 101), 0.01, p)
        assert z_lo == 1 and int(np.argmax(terms)) == 0

    def test_contains_scanned_argmax(self):
        p = CpParams(5.0, 2.0, 0.5)
        z_lo, z_hi = cp_term_range(10.0, p)
        argmax = int(np.argmax(log_terms(np.arange(1, 1001), 10.0, p))) + 1
        assert z_lo <= argmax <= z_hi

    def test_dropped_terms_are_negligible(self):
        for p in GRID:
            for y in Y_VALUES:
                z_lo, z_hi = cp_term_range(y, p)
                t = brute_terms(y, p)
                kept = logsumexp(t[z_lo - 1:z_hi])
                assert kept >= logsumexp(t) + math.log1p(-1e-10)
                outside = np.concatenate([t[:z_lo - 1], t[z_hi:]])
                assert np.all(outside < t.max() + math.log(TERM_TOL))

    def test_far_mode_narrow_window(self):
        # mode near 50,000 but sharply peaked: still representable
        z_lo, z_hi = cp_term_range(5e4, CpParams(4e4, 1.0, 1e-3))
        assert z_lo > 40_000 and z_hi - z_lo < MAX_TERMS

    def test_wide_window_fails_with_parameters(self):
        with pytest.raises(SeriesFailure) as info:
            cp_term_range(1e6, CpParams(1e6, 1.0, 1e3))
        assert info.value.lam == 1e6 and info.value.y == 1e6

    def test_zero_rain_has_no_window(self):
        with pytest.raises(DomainError):
            cp_term_range(0.0, CpParams(1, 1, 1))

    @settings(max_examples=60, deadline=None)
    @given(lam=st.floats(0.01, 50), mu=st.floats(0.05, 50), omega=st.floats(0.05, 10),
           y=st.floats(1e-3, 500))
    def test_window_contains_maximum(self, lam, mu, omega, y):
        p = CpParams(lam, mu, omega)
        z_lo, z_hi = cp_term_range(y, p)
        z = np.arange(max(1, z_lo - 50), z_hi + 51)
        t = log_terms(z, y, p)
        assert z_lo <= z[np.argmax(t)] <= z_hi


class TestSampling:
    def test_vanishing_rate_gives_dry_days(self, rng):
        p = CpParams(1e-12, 1.0, 1.0)
        assert all(cp_sample(p, rng) == (0, 0.0) for _ in range(1000))

    def test_monte_carlo_moments(self, rng):
        p = CpParams(1.0, 2.0, 1.0)
        n = 10**6
        z = rng.poisson(p.lam, n)
        # same construction as cp_sample, vectorised for speed
        y = np.where(z > 0, rng.gamma(np.maximum(z, 1) / p.omega, p.omega * p.mu), 0.0)
        se_mean = math.sqrt(cp_variance(p) / n)
        assert abs(y.mean() - cp_mean(p)) < 3 * se_mean
        m4 = np.mean((y - y.mean()) ** 4)
        se_var = math.sqrt((m4 - y.var() ** 2) / n)
        assert abs(y.var(ddof=1) - cp_variance(p)) < 3 * se_var

    def test_sampler_moments(self, rng):
        p = CpParams(1.5, 2.0, 0.8)
        draws = np.array([cp_sample(p, rng) for _ in range(40_000)])
        z, y = draws[:, 0], draws[:, 1]
        assert np.all((z == 0) == (y == 0))
        assert abs(y.mean() - cp_mean(p)) < 4 * math.sqrt(cp_variance(p) / z.size)
        assert abs(np.mean(z == 0) - math.exp(-p.lam)) < 4 * math.sqrt(0.25 / z.size)

    def test_seeded(self):
        p = CpParams(2.0, 1.0, 1.0)
        a = [cp_sample(p, np.random.default_rng(3)) for _ in range(5)]
        b = [cp_sample(p, np.random.default_rng(3)) for _ in range(5)]
        assert a == b


class TestLatentCount:
    def test_sentinels(self):
        p = CpParams(1.3, 1, 1)
        assert cp_z_log_conditional(0, 0.0, p) == -1.3
        assert cp_z_log_conditional(0, 1.0, p) == -math.inf
        assert cp_z_log_conditional(2, 0.0, p) == -math.inf
        assert cp_z_log_conditional(-1, 1.0, p) == -math.inf

    def test_normalised_conditional(self):
        p = CpParams(1.0, 1.0, 1.0)
        brute = brute_terms(1.5, p, 500)
        ours = np.array([cp_z_log_conditional(z, 1.5, p) for z in range(1, 501)])
        np.testing.assert_allclose(ours - logsumexp(ours), brute - logsumexp(brute), atol=1e-10)

    def test_expectation_hand_case(self):
        p = CpParams(1.0, 1.0, 1.0)
        w = np.exp(brute_terms(1.5, p, 500) - logsumexp(brute_terms(1.5, p, 500)))
        assert cp_posterior_z_expectation(1.5, p) == pytest.approx(np.dot(np.arange(1, 501), w), abs=1e-8)

    def test_expectation_zero_when_dry(self):
        assert cp_posterior_z_expectation(0.0, CpParams(1, 1, 1)) == 0.0

    @pytest.mark.parametrize("p", GRID[::5])
    def test_expectation_positive(self, p):
        assert cp_posterior_z_expectation(1e-3, p) > 0
