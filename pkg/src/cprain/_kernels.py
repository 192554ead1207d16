"""Compiled inner loops for the latent ARMA recursion and its likelihood.

All arrays are float64 except the latent counts ``z`` (int64). ``lin_lam`` and
``lin_mu`` hold the non-recursive part of the log-parameters, i.e.
``beta . x_t + k``. The recursion writes ``log_lam, log_mu, lam, mu`` in place.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, error_model="numpy")
def ma_residual_count(z, lam):
    return (z - lam) / math.sqrt(lam)


@njit(cache=True, error_model="numpy")
def ma_residual_amount(y, z, mu, omega):
    # a dry day carries no amount innovation
    if z == 0:
        return 0.0
    # (y - z mu) / (mu sqrt(z omega)) rearranged so the divisor cannot underflow to zero
    return (y / mu - z) / math.sqrt(z * omega)


@njit(cache=True, error_model="numpy")
def unroll_from(start, stop, lin_lam, lin_mu, k_lam, k_mu, phi_lam, phi_mu,
                gamma_lam, gamma_mu, z, y, omega, log_lam, log_mu, lam, mu):
    """Run the recursion for ``start <= t < stop``; return the first bad index or -1."""
    p = phi_lam.shape[0]
    q = gamma_lam.shape[0]
    for t in range(start, stop):
        eta_lam = lin_lam[t]
        eta_mu = lin_mu[t]
        for i in range(1, p + 1):
            if t - i < 0:
                break
            eta_lam += phi_lam[i - 1] * (log_lam[t - i] - k_lam)
            eta_mu += phi_mu[i - 1] * (log_mu[t - i] - k_mu)
        for i in range(1, q + 1):
            s = t - i
            if s < 0:
                break
            eta_lam += gamma_lam[i - 1] * ma_residual_count(z[s], lam[s])
            eta_mu += gamma_mu[i - 1] * ma_residual_amount(y[s], z[s], mu[s], omega[s])
        lam_t = math.exp(eta_lam)
        mu_t = math.exp(eta_mu)
        if not (lam_t > 0.0 and lam_t < np.inf and mu_t > 0.0 and mu_t < np.inf):
            return t
        log_lam[t] = eta_lam
        log_mu[t] = eta_mu
        lam[t] = lam_t
        mu[t] = mu_t
    return -1


@njit(cache=True, error_model="numpy")
def loglik_from(start, stop, z, y, omega, log_omega, log_lam, log_mu, lam, mu):
    """Sum of per-day log Poisson(z) + log Gamma(y | z) terms for ``start <= t < stop``."""
    total = 0.0
    for t in range(start, stop):
        zt = z[t]
        term = zt * log_lam[t] - lam[t] - math.lgamma(zt + 1.0)
        if y[t] > 0.0:
            if zt == 0:
                return -np.inf
            shape = zt / omega[t]
            log_rate = -log_omega[t] - log_mu[t]
            term += (shape * log_rate - math.lgamma(shape)
                     + (shape - 1.0) * math.log(y[t]) - y[t] * math.exp(log_rate))
        elif zt != 0:
            return -np.inf
        # overflowing parameters leave no usable likelihood; treat them like divergence
        if not term < np.inf:
            return -np.inf
        total += term
    return total


@njit(cache=True, error_model="numpy")
def z_conditional(t, value, stop, max_lag, lin_lam, lin_mu, k_lam, k_mu, phi_lam, phi_mu,
                  gamma_lam, gamma_mu, z, y, omega, log_omega, log_lam, log_mu,
                  lam, mu, s_log_lam, s_log_mu, s_lam, s_mu):
    """Unnormalised log full conditional of ``z[t] = value``.

    Only days ``>= t`` depend on ``z[t]``; the recursion is re-run from
    ``t + 1`` into the scratch arrays ``s_*``, leaving the cached series
    untouched. A proposal that makes the recursion diverge has zero mass.
    """
    lo = max(0, t + 1 - max_lag)
    lo = min(lo, t)
    for s in range(lo, t + 1):
        s_log_lam[s] = log_lam[s]
        s_log_mu[s] = log_mu[s]
        s_lam[s] = lam[s]
        s_mu[s] = mu[s]
    old = z[t]
    z[t] = value
    bad = unroll_from(t + 1, stop, lin_lam, lin_mu, k_lam, k_mu, phi_lam, phi_mu,
                      gamma_lam, gamma_mu, z, y, omega, s_log_lam, s_log_mu, s_lam, s_mu)
    if bad >= 0:
        z[t] = old
        return -np.inf
    out = loglik_from(t, stop, z, y, omega, log_omega, s_log_lam, s_log_mu, s_lam, s_mu)
    z[t] = old
    return out
