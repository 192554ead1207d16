"""Generic MCMC transition kernels.

* :func:`elliptical_slice_step` for targets of the form Gaussian prior times
  likelihood; it never rejects.
* :func:`adaptive_mh_step`, a random-walk Metropolis step whose proposal mixes
  the scaled running covariance of the chain with a small fixed isotropic
  Gaussian.
* :func:`integer_slice_step`, slice sampling over the integers with unit
  stepping out.

Every kernel draws its randomness only from the ``rng`` passed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import KernelError

__all__ = [
    "AdaptState",
    "elliptical_slice_step",
    "adaptive_mh_step",
    "metropolis_accept",
    "integer_slice_step",
]

ADAPTIVE_WEIGHT = 0.95
ADAPTIVE_SCALE = 2.38
FIXED_SCALE = 0.1


@dataclass
class AdaptState:
    """Running moments of the visited states, updated one state at a time."""

    dim: int
    n_seen: int = 0
    running_mean: np.ndarray = None
    sum_sq: np.ndarray = None
    acceptance_count: int = 0
    proposal_count: int = 0

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.dim)
        if self.sum_sq is None:
            self.sum_sq = np.zeros((self.dim, self.dim))

    def update(self, x) -> None:
        """Welford rank-1 update with the new state ``x``."""
        x = np.asarray(x, dtype=float)
        self.n_seen += 1
        delta = x - self.running_mean
        self.running_mean = self.running_mean + delta / self.n_seen
        self.sum_sq = self.sum_sq + np.outer(delta, x - self.running_mean)

    @property
    def running_covariance(self) -> np.ndarray:
        if self.n_seen < 2:
            return np.zeros((self.dim, self.dim))
        return self.sum_sq / (self.n_seen - 1)

    @property
    def acceptance_rate(self) -> float:
        return self.acceptance_count / self.proposal_count if self.proposal_count else 0.0

    def copy(self) -> "AdaptState":
        return AdaptState(self.dim, self.n_seen, self.running_mean.copy(), self.sum_sq.copy(),
                          self.acceptance_count, self.proposal_count)


def elliptical_slice_step(current, prior_mean, prior_sample, log_lik, rng,
                          current_log_lik=None, max_shrinks=200):
    """One elliptical slice sampling update.

    Parameters
    ----------
    current : ndarray
        Current state, with finite log likelihood.
    prior_mean : ndarray
        Mean of the Gaussian prior. The ellipse is centred here.
    prior_sample : ndarray
        A fresh draw from the Gaussian prior (mean included).
    log_lik : callable
        Log likelihood of a state. May return ``-inf``; NaN is an error.
    rng : numpy.random.Generator
    current_log_lik : float, optional
        Cached ``log_lik(current)``.

    Returns
    -------
    next : ndarray
    n_evals : int
        Number of likelihood evaluations made.
    next_log_lik : float
    """
    current = np.asarray(current, dtype=float)
    mean = np.asarray(prior_mean, dtype=float)
    x = current - mean
    nu = np.asarray(prior_sample, dtype=float) - mean
    n_evals = 0
    if current_log_lik is None:
        current_log_lik = log_lik(current)
        n_evals += 1
    if not math.isfinite(current_log_lik):
        raise KernelError(f"current state has log likelihood {current_log_lik}")
    threshold = current_log_lik - rng.standard_exponential()

    angle = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = angle - 2.0 * math.pi, angle
    for _ in range(max_shrinks):
        proposal = x * math.cos(angle) + nu * math.sin(angle) + mean
        ll = log_lik(proposal)
        n_evals += 1
        if math.isnan(ll):
            raise KernelError("log likelihood returned NaN")
        if ll > threshold:
            return proposal, n_evals, ll
        if angle < 0:
            lo = angle
        else:
            hi = angle
        if hi - lo < 1e-14:
            break
        angle = rng.uniform(lo, hi)
    # bracket collapsed onto angle 0, which is the current state
    return current.copy(), n_evals, current_log_lik


def metropolis_accept(log_target_current, log_target_proposal, rng) -> bool:
    """Accept with probability ``min(1, exp(proposal - current))``."""
    log_ratio = log_target_proposal - log_target_current
    if math.isnan(log_ratio):
        return False
    return bool(math.log1p(-rng.random()) < log_ratio) if log_ratio < 0 else True


def _propose(current, adapt, rng):
    d = current.size
    if adapt.n_seen > 2 * d and rng.random() < ADAPTIVE_WEIGHT:
        try:
            chol = np.linalg.cholesky(adapt.running_covariance)
        except np.linalg.LinAlgError:
            chol = None
        if chol is not None and np.all(np.isfinite(chol)):
            return current + (ADAPTIVE_SCALE / math.sqrt(d)) * (chol @ rng.standard_normal(d))
    return current + (FIXED_SCALE / math.sqrt(d)) * rng.standard_normal(d)


def adaptive_mh_step(current, log_target, adapt: AdaptState, rng, current_log_target=None):
    """Adaptive random-walk Metropolis update.

    Once more than ``2 d`` states have been seen, the proposal is the mixture
    ``0.95 N(x, 2.38**2 / d * S) + 0.05 N(x, 0.1**2 / d * I)`` where ``S`` is
    the running covariance in ``adapt``; before that only the fixed component
    is used, as it is whenever ``S`` has no Cholesky factor. ``adapt`` is
    updated in place with the state the chain moves to.

    Returns
    -------
    next : ndarray
    next_log_target : float
    accepted : bool
    """
    current = np.asarray(current, dtype=float)
    if current_log_target is None:
        current_log_target = log_target(current)
    if not math.isfinite(current_log_target):
        raise KernelError(f"current state has log target {current_log_target}")
    proposal = _propose(current, adapt, rng)
    lt = log_target(proposal)
    adapt.proposal_count += 1
    if metropolis_accept(current_log_target, lt, rng):
        adapt.acceptance_count += 1
        adapt.update(proposal)
        return proposal, lt, True
    adapt.update(current)
    return current, current_log_target, False


def integer_slice_step(current: int, log_pmf, support_min: int, rng, max_steps=1000,
                       current_log_pmf=None) -> int:
    """Slice sampling update of a non-negative integer.

    A height is drawn under ``log_pmf(current)``, then the bracket is stepped
    out one integer at a time in each direction for as long as the neighbour
    lies above the height. The bracket is therefore the run of slice members
    containing ``current`` and a uniform draw from it is always accepted.

    Raises
    ------
    KernelError
        If ``log_pmf(current)`` is not finite or the bracket grows beyond
        ``max_steps`` on either side.
    """
    current = int(current)
    if current < support_min:
        raise KernelError(f"current value {current} is below the support minimum {support_min}")
    lp = log_pmf(current) if current_log_pmf is None else current_log_pmf
    if not math.isfinite(lp):
        raise KernelError(f"log pmf at the current value is {lp}")
    height = lp - rng.standard_exponential()

    def above(v):
        value = log_pmf(v)
        if math.isnan(value):
            raise KernelError(f"log pmf returned NaN at {v}")
        return value > height

    lo = current
    while lo - 1 >= support_min and above(lo - 1):
        lo -= 1
        if current - lo > max_steps:
            raise KernelError(f"slice bracket exceeded {max_steps} steps below {current}")
    hi = current
    while above(hi + 1):
        hi += 1
        if hi - current > max_steps:
            raise KernelError(f"slice bracket exceeded {max_steps} steps above {current}")
    if lo == hi:
        return current
    return int(rng.integers(lo, hi + 1))
