"""Latent exponential-link ARMA model for the daily compound Poisson parameters.

For each day ``t``::

    log lam_t   = beta_lam . x_t + Phi_lam_t + Gamma_lam_t + k_lam
    log mu_t    = beta_mu  . x_t + Phi_mu_t  + Gamma_mu_t  + k_mu
    log omega_t = beta_omega . x_t + k_omega

with AR terms ``Phi_t = sum_i phi_i (log param_{t-i} - k)`` over the ``p``
previous days that exist, and MA terms built from standardised residuals of the
realised counts and amounts over the ``q`` previous days.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DataError, DivergenceError

__all__ = [
    "ModelParams",
    "LocationData",
    "ParamSeries",
    "n_params",
    "linear_predictors",
    "unroll",
    "log_likelihood",
    "ma_residual_count",
    "ma_residual_amount",
]


def n_params(n_inputs: int, p: int, q: int) -> int:
    return 3 + 3 * n_inputs + 2 * p + 2 * q


@dataclass
class ModelParams:
    """Per-location parameter vector.

    Flattened order (see :meth:`to_vector`)::

        k_lam, k_mu, k_omega, beta_lam, beta_mu, beta_omega,
        phi_lam, phi_mu, gamma_lam, gamma_mu
    """

    k_lambda: float
    k_mu: float
    k_omega: float
    beta_lambda: np.ndarray
    beta_mu: np.ndarray
    beta_omega: np.ndarray
    phi_lambda: np.ndarray
    phi_mu: np.ndarray
    gamma_lambda: np.ndarray
    gamma_mu: np.ndarray

    def __post_init__(self):
        for name in ("beta_lambda", "beta_mu", "beta_omega",
                     "phi_lambda", "phi_mu", "gamma_lambda", "gamma_mu"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        r = self.beta_lambda.size
        if self.beta_mu.size != r or self.beta_omega.size != r:
            raise ValueError("regression weight vectors must share one length")
        if self.phi_lambda.size != self.phi_mu.size:
            raise ValueError("AR coefficient vectors must share one length")
        if self.gamma_lambda.size != self.gamma_mu.size:
            raise ValueError("MA coefficient vectors must share one length")
        if not np.all(np.isfinite(self.to_vector())):
            raise ValueError("model parameters must be finite")

    @property
    def n_inputs(self) -> int:
        return self.beta_lambda.size

    @property
    def p(self) -> int:
        return self.phi_lambda.size

    @property
    def q(self) -> int:
        return self.gamma_lambda.size

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.n_inputs, self.p, self.q

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            [self.k_lambda, self.k_mu, self.k_omega],
            self.beta_lambda, self.beta_mu, self.beta_omega,
            self.phi_lambda, self.phi_mu, self.gamma_lambda, self.gamma_mu,
        ]).astype(float)

    @classmethod
    def from_vector(cls, vector, n_inputs: int, p: int, q: int) -> "ModelParams":
        v = np.asarray(vector, dtype=float)
        if v.shape != (n_params(n_inputs, p, q),):
            raise ValueError(f"expected {n_params(n_inputs, p, q)} entries, got shape {v.shape}")
        r = n_inputs
        cuts = np.cumsum([3, r, r, r, p, p, q, q])
        parts = np.split(v, cuts[:-1])
        return cls(v[0], v[1], v[2], *[a.copy() for a in parts[1:]])

    @classmethod
    def constant(cls, k_lambda, k_mu, k_omega, n_inputs=0, p=0, q=0) -> "ModelParams":
        z = np.zeros
        return cls(k_lambda, k_mu, k_omega, z(n_inputs), z(n_inputs), z(n_inputs),
                   z(p), z(p), z(q), z(q))

    @staticmethod
    def labels(n_inputs: int, p: int, q: int) -> list[str]:
        out = ["k_lambda", "k_mu", "k_omega"]
        for name in ("beta_lambda", "beta_mu", "beta_omega"):
            out += [f"{name}[{i}]" for i in range(n_inputs)]
        for name, n in (("phi_lambda", p), ("phi_mu", p), ("gamma_lambda", q), ("gamma_mu", q)):
            out += [f"{name}[{i + 1}]" for i in range(n)]
        return out


@dataclass
class LocationData:
    """Aligned daily inputs and rainfall for one grid cell."""

    inputs: np.ndarray
    precip: np.ndarray
    calendar: np.ndarray | None = None
    location: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.precip = np.asarray(self.precip, dtype=float)
        n = self.precip.shape[0]
        if self.precip.ndim != 1 or n < 1:
            raise DataError("precip must be a non-empty 1-d series")
        if self.inputs.shape[0] != n:
            raise DataError(f"inputs have {self.inputs.shape[0]} rows but precip has {n} days")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.precip))):
            raise DataError("missing or non-finite entries in location data")
        if np.any(self.precip < 0):
            raise DataError("negative rainfall")
        if self.calendar is not None:
            self.calendar = np.asarray(self.calendar, dtype="datetime64[D]")
            if self.calendar.shape != (n,):
                raise DataError("calendar length does not match precip")

    def __len__(self):
        return self.precip.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    def slice(self, start, stop) -> "LocationData":
        cal = None if self.calendar is None else self.calendar[start:stop]
        return LocationData(self.inputs[start:stop], self.precip[start:stop], cal,
                            self.location, dict(self.meta))

    def standardisation_warning(self) -> bool:
        """True when some input column is visibly not centred."""
        return bool(np.any(np.abs(self.inputs.mean(axis=0)) >= 0.1))


@dataclass
class ParamSeries:
    lam: np.ndarray
    mu: np.ndarray
    omega: np.ndarray

    def __len__(self):
        return self.lam.shape[0]


def ma_residual_count(z, lam):
    """Standardised residual ``(z - lam) / sqrt(lam)`` of the event count."""
    return float(_kernels.ma_residual_count(float(z), float(lam)))


def ma_residual_amount(y, z, mu, omega):
    """Standardised amount residual; exactly zero on a dry day."""
    return float(_kernels.ma_residual_amount(float(y), int(z), float(mu), float(omega)))


def linear_predictors(theta_vec, inputs, n_inputs, p, q):
    """Non-recursive parts ``beta . x + k`` of the three log-parameters."""
    r = n_inputs
    b = theta_vec[3:3 + 3 * r].reshape(3, r)
    lin = inputs @ b.T + theta_vec[:3]
    return (np.ascontiguousarray(lin[:, 0]), np.ascontiguousarray(lin[:, 1]),
            np.ascontiguousarray(lin[:, 2]))


def arma_coefficients(theta_vec, n_inputs, p, q):
    o = 3 + 3 * n_inputs
    return (theta_vec[o:o + p].copy(), theta_vec[o + p:o + 2 * p].copy(),
            theta_vec[o + 2 * p:o + 2 * p + q].copy(),
            theta_vec[o + 2 * p + q:o + 2 * p + 2 * q].copy())


def _check_z(z, precip):
    z = np.asarray(z)
    if z.shape != precip.shape:
        raise DataError("latent counts and rainfall differ in length")
    if np.any(z < 0):
        raise DataError("latent counts must be non-negative")
    return np.ascontiguousarray(z, dtype=np.int64)


def _unroll_arrays(theta, data: LocationData, z):
    """Return ``(z, omega, log_omega, log_lam, log_mu, lam, mu)``."""
    if isinstance(theta, ModelParams):
        r, p, q = theta.dims
        vec = theta.to_vector()
    else:
        raise TypeError("theta must be a ModelParams instance")
    if r != data.n_inputs:
        raise DataError(f"theta has {r} regression weights but data has {data.n_inputs} inputs")
    z = _check_z(z, data.precip)
    lin_lam, lin_mu, log_omega = linear_predictors(vec, data.inputs, r, p, q)
    omega = np.exp(log_omega)
    bad = np.nonzero(~(np.isfinite(omega) & (omega > 0)))[0]
    if bad.size:
        raise DivergenceError(f"omega is not finite and positive at day {bad[0]}", int(bad[0]))
    phi_lam, phi_mu, gamma_lam, gamma_mu = arma_coefficients(vec, r, p, q)
    n = len(data)
    log_lam, log_mu, lam, mu = (np.empty(n) for _ in range(4))
    bad = _kernels.unroll_from(0, n, lin_lam, lin_mu, vec[0], vec[1], phi_lam, phi_mu,
                               gamma_lam, gamma_mu, z, data.precip, omega,
                               log_lam, log_mu, lam, mu)
    if bad >= 0:
        raise DivergenceError(f"latent ARMA recursion diverged at day {bad}", int(bad))
    return z, omega, log_omega, log_lam, log_mu, lam, mu


def unroll(theta: ModelParams, data: LocationData, z) -> ParamSeries:
    """Daily compound Poisson parameters implied by ``theta``, inputs and history.

    Raises
    ------
    DivergenceError
        If any parameter is not finite and positive; ``index`` names the first bad day.
    """
    _, omega, _, _, _, lam, mu = _unroll_arrays(theta, data, z)
    return ParamSeries(lam, mu, omega)


def log_likelihood(theta: ModelParams, data: LocationData, z) -> float:
    """Joint log density of the rainfall and latent counts given ``theta``.

    Returns ``-inf`` when some ``(z_t, y_t)`` pair is inconsistent.
    """
    z, omega, log_omega, log_lam, log_mu, lam, mu = _unroll_arrays(theta, data, z)
    return float(_kernels.loglik_from(0, z.size, z, data.precip, omega, log_omega,
                                      log_lam, log_mu, lam, mu))
