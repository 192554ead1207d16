"""Posterior-predictive ensemble forecasts and their summaries.

Each ensemble member takes one posterior draw of ``theta``, carries the
latent ARMA state from the training period forward (or restarts it, with
``reset=True``) and simulates rainfall day by day over the test window.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .arma import LocationData, ModelParams, arma_coefficients, linear_predictors
from .compound_poisson import CpParams, cp_sample
from .errors import DataError, DivergenceError
from .seeding import make_rng, mix_seed

__all__ = [
    "ForecastEnsemble",
    "EnsembleSummary",
    "simulate_forward",
    "posterior_predictive",
    "select_draws",
    "hdi_with_atom",
    "ensemble_summaries",
    "MIN_MEMBERS_FOR_HDI",
    "DEFAULT_THRESHOLDS",
]

MIN_MEMBERS_FOR_HDI = 20
DEFAULT_THRESHOLDS = (0.1, 1.0, 5.0, 15.0, 25.0)
ENSEMBLE_VERSION = 1


@dataclass
class ForecastEnsemble:
    """``members[m, t]`` is rainfall (mm/day) of member ``m`` on test day ``t``."""

    members: np.ndarray
    counts: np.ndarray
    calendar: np.ndarray | None = None
    location: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.members.ndim != 2 or self.members.shape[0] < 1:
            raise ValueError("members must be an (M, T) array with M >= 1")
        if self.counts.shape != self.members.shape:
            raise ValueError("counts and members differ in shape")
        if np.any((self.members == 0) != (self.counts == 0)):
            raise ValueError("a member day is dry exactly when its count is zero")
        if self.calendar is not None:
            self.calendar = np.asarray(self.calendar, dtype="datetime64[D]")

    @property
    def n_members(self) -> int:
        return self.members.shape[0]

    @property
    def n_days(self) -> int:
        return self.members.shape[1]

    def save(self, stem) -> None:
        stem = str(stem)
        arrays = {"members": self.members, "counts": self.counts}
        if self.calendar is not None:
            arrays["calendar"] = self.calendar.astype("int64")
        tmp = stem + ".tmp.npz"
        np.savez(tmp, **arrays)
        os.replace(tmp, stem + ".npz")
        with open(stem + ".json", "w") as fh:
            json.dump({"format": "cprain-ensemble", "version": ENSEMBLE_VERSION,
                       "location": self.location, "meta": self.meta}, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, stem) -> "ForecastEnsemble":
        stem = str(stem)
        with open(stem + ".json") as fh:
            head = json.load(fh)
        if head.get("format") != "cprain-ensemble" or head.get("version") != ENSEMBLE_VERSION:
            raise DataError(f"{stem}.json is not a version {ENSEMBLE_VERSION} ensemble")
        with np.load(stem + ".npz") as npz:
            cal = npz["calendar"].astype("datetime64[D]") if "calendar" in npz else None
            return cls(npz["members"], npz["counts"], cal, head["location"], head["meta"])


def simulate_forward(theta: ModelParams, history: LocationData | None, history_z,
                     future_inputs, rng, reset: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one trajectory over the test window.

    Parameters
    ----------
    theta : ModelParams
    history : LocationData or None
        Training data whose latent state is carried into the test window.
        Ignored (may be ``None``) when ``reset`` is true.
    history_z : array of int
        Latent counts for ``history``, e.g. the final state of the chain.
    future_inputs : (T_test, R) array
        Test-period inputs, standardised with the training statistics.
    rng : numpy.random.Generator
    reset : bool
        Start the ARMA recursion afresh at the first test day instead of
        carrying the training state forward.

    Returns
    -------
    y, z : ndarray
        Simulated rainfall and latent counts, each of length ``T_test``.
    """
    r, p, q = theta.dims
    future = np.asarray(future_inputs, dtype=float)
    if future.ndim == 1:
        future = future[:, None]
    if future.shape[1] != r:
        raise DataError(f"future inputs have {future.shape[1]} columns, theta expects {r}")
    n_test = future.shape[0]
    if reset or history is None:
        inputs, y, z = future, np.zeros(n_test), np.zeros(n_test, dtype=np.int64)
        start = 0
    else:
        hz = np.asarray(history_z, dtype=np.int64)
        if hz.shape != history.precip.shape or np.any((hz == 0) != (history.precip == 0)):
            raise DataError("history latent counts are inconsistent with history rainfall")
        start = len(history)
        inputs = np.vstack([history.inputs, future])
        y = np.concatenate([history.precip, np.zeros(n_test)])
        z = np.concatenate([hz, np.zeros(n_test, dtype=np.int64)])
    vec = theta.to_vector()
    lin_lam, lin_mu, log_omega = linear_predictors(vec, inputs, r, p, q)
    omega = np.exp(log_omega)
    if not np.all(np.isfinite(omega) & (omega > 0)):
        raise DivergenceError("omega is not finite and positive", int(np.argmin(np.isfinite(omega))))
    phi_lam, phi_mu, gamma_lam, gamma_mu = arma_coefficients(vec, r, p, q)
    n = y.size
    log_lam, log_mu, lam, mu = (np.empty(n) for _ in range(4))
    args = (lin_lam, lin_mu, vec[0], vec[1], phi_lam, phi_mu, gamma_lam, gamma_mu, z, y, omega,
            log_lam, log_mu, lam, mu)
    if start:
        bad = _kernels.unroll_from(0, start, *args)
        if bad >= 0:
            raise DivergenceError(f"latent ARMA recursion diverged at history day {bad}", int(bad))
    for t in range(start, n):
        bad = _kernels.unroll_from(t, t + 1, *args)
        if bad >= 0:
            raise DivergenceError(f"latent ARMA recursion diverged at test day {t - start}",
                                  int(t - start))
        z[t], y[t] = cp_sample(CpParams(lam[t], mu[t], omega[t]), rng)
    return y[start:].copy(), z[start:].copy()


def select_draws(n_draws: int, n_members: int, rng=None) -> tuple[np.ndarray, bool]:
    """Archive indices for each member: evenly spaced, or resampled if too few.

    Returns ``(indices, with_replacement)``.
    """
    if n_draws < 1:
        raise ValueError("archive holds no draws")
    if n_members <= n_draws:
        idx = np.floor(np.arange(n_members) * (n_draws / n_members)).astype(np.int64)
        return idx, False
    rng = rng if rng is not None else make_rng(0)
    return np.sort(rng.integers(0, n_draws, size=n_members)), True


def _member_task(task):
    vec, dims, history, history_z, future, seed, reset = task
    theta = ModelParams.from_vector(vec, *dims)
    return simulate_forward(theta, history, history_z, future, make_rng(seed), reset=reset)


def posterior_predictive(archive, history: LocationData, future_inputs, n_members: int,
                         seed: int = 0, history_z=None, reset: bool = False, calendar=None,
                         workers: int = 1) -> ForecastEnsemble:
    """Ensemble of ``n_members`` trajectories marginalising over posterior draws.

    Member ``m`` uses archive draw ``select_draws(...)[m]`` and its own stream
    seeded with ``mix_seed(seed, m)``, so the ensemble does not depend on
    ``workers``. ``history_z`` defaults to the archive's final latent counts.
    """
    if n_members < 1:
        raise ValueError("need at least one member")
    draws = np.asarray(archive.theta)
    idx, replaced = select_draws(draws.shape[0], n_members, make_rng(mix_seed(seed, 2**32)))
    if history_z is None:
        history_z = archive.final_z
    dims = tuple(archive.dims)
    future = np.asarray(future_inputs, dtype=float)
    tasks = [(draws[i], dims, None if reset else history, None if reset else history_z, future,
              mix_seed(seed, m), reset) for m, i in enumerate(idx)]
    if workers > 1 and n_members > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_member_task, tasks, chunksize=max(1, n_members // (4 * workers))))
    else:
        results = [_member_task(t) for t in tasks]
    members = np.stack([r[0] for r in results])
    counts = np.stack([r[1] for r in results])
    meta = {"draw_indices": idx.tolist(), "with_replacement": replaced, "seed": int(seed),
            "reset": bool(reset), "n_members": int(n_members)}
    return ForecastEnsemble(members, counts, calendar, getattr(history, "location", ""), meta)


def hdi_with_atom(sample, mass: float) -> tuple[bool, float, float]:
    """Highest-density set of an empirical sample with an atom at zero.

    The set is ``{0}`` united with a closed interval ``[lo, hi]`` of positive
    values. The zero atom has unbounded density, so it is taken first; the
    interval is then the shortest window of consecutive sorted positive values
    holding the remaining count.

    Returns
    -------
    has_zero : bool
    lo, hi : float
        The positive interval, or ``nan, nan`` when the set is ``{0}`` alone.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    need = int(math.ceil(mass * n - 1e-9))
    n_zero = int(np.count_nonzero(x == 0))
    if n_zero >= need:
        return True, math.nan, math.nan
    pos = x[n_zero:]
    k = need - n_zero
    widths = pos[k - 1:] - pos[:pos.size - k + 1]
    j = int(np.argmin(widths))
    return n_zero > 0, float(pos[j]), float(pos[j + k - 1])


@dataclass
class EnsembleSummary:
    """Per-day summaries; ``hdi[mass]`` holds ``(has_zero, lo, hi)`` arrays."""

    median: np.ndarray
    hdi: dict
    thresholds: tuple
    exceedance: np.ndarray
    wet_fraction: np.ndarray

    def to_csv(self, path, calendar=None) -> None:
        cols = ["day"] + (["date"] if calendar is not None else []) + ["median"]
        masses = sorted(self.hdi)
        for m in masses:
            tag = f"hdi{int(round(100 * m))}"
            cols += [f"{tag}_lo", f"{tag}_hi", f"{tag}_zero"]
        cols += [f"p_gt_{x:g}" for x in self.thresholds]
        lines = [",".join(cols)]
        for t in range(self.median.size):
            row = [str(t)]
            if calendar is not None:
                row.append(str(np.datetime64(calendar[t], "D")))
            row.append(repr(float(self.median[t])))
            for m in masses:
                has_zero, lo, hi = self.hdi[m]
                if math.isnan(lo[t]):
                    row += ["0.0", "0.0"]
                else:
                    row += [repr(float(lo[t])), repr(float(hi[t]))]
                row.append("1" if has_zero[t] else "0")
            row += [repr(float(v)) for v in self.exceedance[:, t]]
            lines.append(",".join(row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def ensemble_summaries(e: ForecastEnsemble, thresholds=DEFAULT_THRESHOLDS,
                       masses=(0.68, 0.95)) -> EnsembleSummary:
    """Median, highest-density sets and exceedance probabilities for each day.

    In the CSV export a ``{0}``-only set is written as ``lo = hi = 0`` with the
    zero flag set.

    Raises
    ------
    ValueError
        With fewer than 20 members, too few for a meaningful HDI.
    """
    if e.n_members < MIN_MEMBERS_FOR_HDI:
        raise ValueError(f"HDI summaries need at least {MIN_MEMBERS_FOR_HDI} members, got {e.n_members}")
    m = e.members
    median = np.median(m, axis=0)
    hdi = {}
    for mass in masses:
        out = [hdi_with_atom(m[:, t], mass) for t in range(e.n_days)]
        hdi[mass] = (np.array([o[0] for o in out]), np.array([o[1] for o in out]),
                     np.array([o[2] for o in out]))
    thresholds = tuple(float(x) for x in thresholds)
    exceed = np.array([(m > x).mean(axis=0) for x in thresholds]).reshape(len(thresholds), e.n_days)
    return EnsembleSummary(median, hdi, thresholds, exceed, (m > 0).mean(axis=0))
