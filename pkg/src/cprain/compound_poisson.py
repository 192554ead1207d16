"""Compound Poisson distribution of daily rainfall.

A day's total rainfall is ``Y = G_1 + ... + G_Z`` with ``Z ~ Poisson(lam)``
rain events and i.i.d. Gamma event amounts. Conditional on ``Z = z >= 1``,
``Y`` is Gamma with shape ``z / omega`` and rate ``1 / (omega * mu)``, so that
``E[Y | Z] = Z mu`` and ``Var[Y | Z] = Z omega mu**2``. ``Y = 0`` exactly when
``Z = 0``, giving an atom at zero of mass ``exp(-lam)``.

The density on ``y > 0`` is an infinite series over ``z``. Terms are log-concave
in ``z``, so the series is summed over a window around the largest term, outside
of which every term is below ``TERM_TOL`` times the largest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError, SeriesFailure

__all__ = [
    "CpParams",
    "TERM_TOL",
    "MAX_TERMS",
    "log_terms",
    "cp_log_density",
    "cp_term_range",
    "cp_sample",
    "cp_z_log_conditional",
    "cp_posterior_z_expectation",
    "cp_mean",
    "cp_variance",
]

#: relative size below which a series term is dropped
TERM_TOL = 1e-12
#: hard cap on the width of the summation window
MAX_TERMS = 10_000

_LOG_TOL = math.log(TERM_TOL)
#: floor for simulated wet-day amounts (smallest normal double)
SMALLEST_AMOUNT = float(np.finfo(float).tiny)
_CHUNK = 32


@dataclass(frozen=True)
class CpParams:
    """Parameters of one compound Poisson law.

    Attributes
    ----------
    lam : float
        Poisson rate, the expected number of rain events per day.
    mu : float
        Mean rainfall per event (mm).
    omega : float
        Gamma dispersion, dimensionless.
    """

    lam: float
    mu: float
    omega: float

    def __post_init__(self):
        for name in ("lam", "mu", "omega"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")

    @property
    def gamma_rate(self) -> float:
        return 1.0 / (self.omega * self.mu)


def cp_mean(p: CpParams) -> float:
    return p.lam * p.mu


def cp_variance(p: CpParams) -> float:
    return p.lam * p.mu**2 * (1.0 + p.omega)


def _check_y(y):
    if not math.isfinite(y) or y < 0:
        raise DomainError(f"rainfall must be finite and non-negative, got {y!r}")


def log_terms(z, y: float, p: CpParams) -> np.ndarray:
    """Log of ``Poisson(z; lam) * GammaDensity(y; z/omega, 1/(omega mu))``.

    ``z`` is an array of positive integers and ``y > 0``.
    """
    z = np.asarray(z, dtype=float)
    shape = z / p.omega
    log_rate = -math.log(p.omega) - math.log(p.mu)
    return (
        z * math.log(p.lam) - p.lam - gammaln(z + 1.0)
        + shape * log_rate - gammaln(shape) + (shape - 1.0) * math.log(y)
        - y * p.gamma_rate
    )


def _find_mode(y, p):
    """Integer argmax of the series terms.

    Log-concavity makes the increments ``t(z + 1) - t(z)`` non-increasing, so
    the mode is the first ``z`` whose increment is not positive: bracket it by
    doubling, then bisect.
    """

    def rises(z):
        t = log_terms(np.array([z, z + 1]), y, p)
        return t[1] > t[0]

    if not rises(1):
        mode = 1
    else:
        lo, hi = 1, 2
        while rises(hi):
            lo, hi = hi, 2 * hi
            if hi > 2**62:
                raise SeriesFailure(
                    "could not locate the largest series term",
                    y=y, lam=p.lam, mu=p.mu, omega=p.omega,
                )
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if rises(mid):
                lo = mid
            else:
                hi = mid
        mode = hi
    return mode, float(log_terms(np.array([mode]), y, p)[0])


def cp_term_range(y: float, p: CpParams) -> tuple[int, int]:
    """Inclusive window ``(z_lo, z_hi)`` of series terms that matter.

    Every term outside the window is smaller than ``TERM_TOL`` times the
    largest term, which lies inside the window.

    Raises
    ------
    SeriesFailure
        If the window would be wider than ``MAX_TERMS``.
    """
    _check_y(y)
    if y == 0:
        raise DomainError("the series window is only defined for y > 0")
    mode, log_max = _find_mode(y, p)
    cutoff = log_max + _LOG_TOL

    z_lo = mode
    while z_lo > 1:
        z = np.arange(max(1, z_lo - _CHUNK), z_lo)
        below = np.nonzero(log_terms(z, y, p) < cutoff)[0]
        if below.size:
            z_lo = int(z[below[-1]]) + 1
            break
        z_lo = int(z[0])

    z_hi = mode
    while True:
        z = np.arange(z_hi + 1, z_hi + 1 + _CHUNK)
        below = np.nonzero(log_terms(z, y, p) < cutoff)[0]
        if below.size:
            z_hi = int(z[below[0]]) - 1
            break
        z_hi = int(z[-1])
        if z_hi - z_lo + 1 > MAX_TERMS:
            break

    if z_hi - z_lo + 1 > MAX_TERMS:
        raise SeriesFailure(
            f"series window exceeds {MAX_TERMS} terms",
            y=y, lam=p.lam, mu=p.mu, omega=p.omega,
        )
    return z_lo, z_hi


def cp_log_density(y: float, p: CpParams) -> float:
    """Log density of rainfall ``y`` (log mass of the atom when ``y == 0``)."""
    _check_y(y)
    if y == 0:
        return -p.lam
    z_lo, z_hi = cp_term_range(y, p)
    return float(logsumexp(log_terms(np.arange(z_lo, z_hi + 1), y, p)))


def cp_sample(p: CpParams, rng: np.random.Generator) -> tuple[int, float]:
    """Draw ``(z, y)``: the event count and the rainfall amount.

    Wet-day amounts are at least ``SMALLEST_AMOUNT`` so that ``y > 0``
    exactly when ``z > 0``.
    """
    z = int(rng.poisson(p.lam))
    if z == 0:
        return 0, 0.0
    y = float(rng.gamma(z / p.omega, p.omega * p.mu))
    # a tiny shape can underflow the draw to 0.0, which would read as a dry day
    return z, max(y, SMALLEST_AMOUNT)


def cp_z_log_conditional(z: int, y: float, p: CpParams) -> float:
    """Unnormalised log mass of ``Z = z`` jointly with ``Y = y``.

    Inconsistent pairs (a dry day with events, or a wet day without) return
    ``-inf`` rather than raising.
    """
    if z < 0:
        return -math.inf
    if y == 0:
        return -p.lam if z == 0 else -math.inf
    if z == 0:
        return -math.inf
    return float(log_terms(np.array([z]), y, p)[0])


def cp_posterior_z_expectation(y: float, p: CpParams) -> float:
    """``E[Z | Y = y]``; zero on dry days, strictly positive on wet days."""
    _check_y(y)
    if y == 0:
        return 0.0
    z_lo, z_hi = cp_term_range(y, p)
    z = np.arange(z_lo, z_hi + 1)
    terms = log_terms(z, y, p)
    weights = np.exp(terms - terms.max())
    return float(np.dot(z, weights) / weights.sum())
