"""Priors on the model parameters and precisions, and chain initialisation.

Constants and regression weights share a Gaussian prior with precision
``tau_beta``; ARMA coefficients are centred at zero with precision
``tau_arma``. The precisions have Gamma priors, ``tau_arma`` shifted by 16.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels
from .arma import LocationData, ModelParams, linear_predictors, arma_coefficients, n_params
from .compound_poisson import CpParams, cp_posterior_z_expectation
from .errors import DivergenceError, InitializationError

__all__ = [
    "Precisions",
    "PriorConfig",
    "prior_mean_vector",
    "prior_precision_vector",
    "log_prior_theta",
    "log_prior_tau",
    "sample_prior",
    "sample_prior_vector",
    "sample_tau",
    "init_estimates",
    "init_latent_counts",
]


@dataclass(frozen=True)
class Precisions:
    tau_beta: float
    tau_arma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tau_beta, self.tau_arma])


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters.

    ``gamma_convention`` says how the second argument of each Gamma prior is
    read: ``"shape_rate"`` (default) takes ``*_rate`` literally as a rate;
    ``"shape_scale"`` reads the same number as a scale.
    """

    k0_lambda: float = -0.46
    k0_mu: float = 1.44
    k0_omega: float = -0.45
    tau_beta_shape: float = 2.8
    tau_beta_rate: float = 1 / 2.3
    tau_arma_shape: float = 1.3
    tau_arma_rate: float = 1 / 65
    tau_arma_shift: float = 16.0
    gamma_convention: str = "shape_rate"

    def __post_init__(self):
        for name in ("tau_beta_shape", "tau_beta_rate", "tau_arma_shape", "tau_arma_rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if self.gamma_convention not in ("shape_rate", "shape_scale"):
            raise ValueError(f"unknown gamma_convention {self.gamma_convention!r}")

    def effective_rates(self) -> tuple[float, float]:
        if self.gamma_convention == "shape_rate":
            return self.tau_beta_rate, self.tau_arma_rate
        return 1.0 / self.tau_beta_rate, 1.0 / self.tau_arma_rate

    def to_dict(self) -> dict:
        return asdict(self)


def prior_mean_vector(cfg: PriorConfig, n_inputs: int, p: int, q: int) -> np.ndarray:
    m = np.zeros(n_params(n_inputs, p, q))
    m[:3] = cfg.k0_lambda, cfg.k0_mu, cfg.k0_omega
    return m


def prior_precision_vector(tau: Precisions, n_inputs: int, p: int, q: int) -> np.ndarray:
    n_beta = 3 + 3 * n_inputs
    prec = np.full(n_params(n_inputs, p, q), float(tau.tau_arma))
    prec[:n_beta] = tau.tau_beta
    return prec


def _gaussian_logpdf(x, mean, prec):
    d = x - mean
    return float(0.5 * np.sum(np.log(prec)) - 0.5 * x.size * math.log(2 * math.pi)
                 - 0.5 * np.dot(prec * d, d))


def log_prior_theta(theta: ModelParams, tau: Precisions, cfg: PriorConfig) -> float:
    r, p, q = theta.dims
    return _gaussian_logpdf(theta.to_vector(), prior_mean_vector(cfg, r, p, q),
                            prior_precision_vector(tau, r, p, q))


def _gamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1) * math.log(x) - rate * x


def log_prior_tau(tau: Precisions, cfg: PriorConfig) -> float:
    """Log prior density of the precisions; ``-inf`` outside the support."""
    shifted = tau.tau_arma - cfg.tau_arma_shift
    if not (tau.tau_beta > 0 and shifted > 0) or not math.isfinite(tau.tau_beta + shifted):
        return -math.inf
    rate_beta, rate_arma = cfg.effective_rates()
    return (_gamma_logpdf(tau.tau_beta, cfg.tau_beta_shape, rate_beta)
            + _gamma_logpdf(shifted, cfg.tau_arma_shape, rate_arma))


def sample_prior_vector(tau: Precisions, cfg: PriorConfig, dims, rng) -> np.ndarray:
    r, p, q = dims
    mean = prior_mean_vector(cfg, r, p, q)
    sd = 1.0 / np.sqrt(prior_precision_vector(tau, r, p, q))
    return mean + sd * rng.standard_normal(mean.size)


def sample_prior(tau: Precisions, cfg: PriorConfig, dims, rng) -> ModelParams:
    """Exact draw of ``theta`` from its Gaussian prior given the precisions."""
    return ModelParams.from_vector(sample_prior_vector(tau, cfg, dims, rng), *dims)


def sample_tau(cfg: PriorConfig, rng) -> Precisions:
    rate_beta, rate_arma = cfg.effective_rates()
    return Precisions(float(rng.gamma(cfg.tau_beta_shape, 1.0 / rate_beta)),
                      float(cfg.tau_arma_shift + rng.gamma(cfg.tau_arma_shape, 1.0 / rate_arma)))


def init_estimates(precip) -> tuple[float, float, float]:
    """Method-of-moments starting values for ``(k_lambda, k_mu, k_omega)``.

    Raises
    ------
    InitializationError
        When the series is too short, all dry, or the implied rate or
        dispersion is not positive.
    """
    y = np.asarray(precip, dtype=float)
    n = y.size
    if n < 2:
        raise InitializationError("need at least two days")
    n_wet = int(np.count_nonzero(y > 0))
    if n_wet == 0:
        raise InitializationError("series is entirely dry")
    lam = math.log((n + 0.5) / (n - n_wet + 1))
    if not lam > 0:
        raise InitializationError(f"rate estimate {lam} is not positive")
    mean = float(y.mean())
    var = float(y.var(ddof=1))
    mu = mean / lam
    omega = var / (lam * mu**2) - 1.0
    if not omega > 0:
        raise InitializationError(f"dispersion estimate {omega} is not positive")
    return math.log(lam), math.log(mu), math.log(omega)


def round_nonzero(expectation: float) -> int:
    """Round half up, never below one."""
    return max(1, int(math.floor(expectation + 0.5)))


def init_latent_counts(data: LocationData, theta: ModelParams) -> np.ndarray:
    """Latent counts set to the rounded conditional expectation, day by day.

    Each day's parameters depend on the counts already chosen for earlier days,
    so the recursion and the rounding advance together.
    """
    r, p, q = theta.dims
    vec = theta.to_vector()
    lin_lam, lin_mu, log_omega = linear_predictors(vec, data.inputs, r, p, q)
    omega = np.exp(log_omega)
    phi_lam, phi_mu, gamma_lam, gamma_mu = arma_coefficients(vec, r, p, q)
    n = len(data)
    y = data.precip
    z = np.zeros(n, dtype=np.int64)
    log_lam, log_mu, lam, mu = (np.empty(n) for _ in range(4))
    for t in range(n):
        bad = _kernels.unroll_from(t, t + 1, lin_lam, lin_mu, vec[0], vec[1], phi_lam, phi_mu,
                                   gamma_lam, gamma_mu, z, y, omega,
                                   log_lam, log_mu, lam, mu)
        if bad >= 0:
            raise DivergenceError(f"latent ARMA recursion diverged at day {bad}", bad)
        if y[t] > 0:
            e = cp_posterior_z_expectation(y[t], CpParams(lam[t], mu[t], omega[t]))
            z[t] = round_nonzero(e)
    return z
