"""Random-scan Gibbs sampler for one location.

Each step picks one block with fixed probabilities and updates it:

* ``theta`` by elliptical slice sampling against the latent-ARMA likelihood,
* the precisions by adaptive random-walk Metropolis on
  ``(log tau_beta, log(tau_arma - shift))``,
* one latent count ``z_t`` (``t`` uniform over days) by integer slice sampling
  of its full conditional. Dry days are fixed at ``z_t = 0``.

The chain owns a cache of the daily parameter series which is kept identical
to a from-scratch recomputation after every step.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, asdict, field

import numpy as np

from . import _kernels
from .arma import (LocationData, ModelParams, ParamSeries, arma_coefficients,
                   linear_predictors, n_params)
from .binio import read_container, write_container
from .errors import (CheckpointError, DivergenceError, InitializationError, KernelError,
                     SeriesFailure)
from .priors import (Precisions, PriorConfig, init_estimates, init_latent_counts,
                     log_prior_tau, prior_mean_vector)
from .samplers import AdaptState, adaptive_mh_step, elliptical_slice_step, integer_slice_step
from .seeding import make_rng

__all__ = [
    "ChainConfig",
    "ChainState",
    "GibbsSampler",
    "Chain",
    "SampleArchive",
    "gibbs_step",
    "run_chain",
    "initial_state",
    "make_state",
    "diagnostics",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CPTCHKPT"
CHECKPOINT_VERSION = 1
ARCHIVE_VERSION = 1

THETA, TAU, Z = 0, 1, 2
COMPONENTS = ("theta", "tau", "z")


@dataclass
class ChainConfig:
    """Run lengths, scan probabilities and lag orders for one chain.

    ``scan_weights=None`` resolves to ``(1, 0.2, 3e-3 * T)`` for ``T`` days.
    ``z_horizon`` (off by default) truncates the latent-count conditional to
    ``z_horizon * max(p, q)`` days ahead; this is an approximation meant only
    for speed experiments.
    """

    n_steps: int = 50_000
    n_burn_in: int = 15_000
    thin: int = 1
    scan_weights: tuple | None = None
    p: int = 5
    q: int = 5
    seed: int = 0
    checkpoint_every: int = 5_000
    z_horizon: int | None = None

    def __post_init__(self):
        if self.n_steps < 1 or self.thin < 1:
            raise ValueError("n_steps and thin must be positive")
        if not 0 <= self.n_burn_in < self.n_steps:
            raise ValueError("need 0 <= n_burn_in < n_steps")
        if self.p < 0 or self.q < 0:
            raise ValueError("lag orders must be non-negative")
        if self.scan_weights is not None:
            w = tuple(float(v) for v in self.scan_weights)
            if len(w) != 3 or min(w) < 0 or sum(w) <= 0:
                raise ValueError("scan_weights must be three non-negative numbers")
            self.scan_weights = w

    def resolved_scan_weights(self, n_days: int) -> np.ndarray:
        w = self.scan_weights if self.scan_weights is not None else (1.0, 0.2, 3e-3 * n_days)
        return np.asarray(w, dtype=float)

    @property
    def n_draws(self) -> int:
        return -(-(self.n_steps - self.n_burn_in) // self.thin)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scan_weights"] = None if self.scan_weights is None else list(self.scan_weights)
        return d


class _Series:
    """Daily parameter arrays for one ``(theta, z)`` pair."""

    __slots__ = ("lin_lam", "lin_mu", "log_omega", "omega", "log_lam", "log_mu",
                 "lam", "mu", "phi_lam", "phi_mu", "gamma_lam", "gamma_mu", "log_lik")

    def copy(self):
        out = _Series()
        for name in self.__slots__:
            v = getattr(self, name)
            setattr(out, name, v.copy() if isinstance(v, np.ndarray) else v)
        return out


def _compute_series(vec, z, data: LocationData, dims) -> _Series:
    r, p, q = dims
    s = _Series()
    s.lin_lam, s.lin_mu, s.log_omega = linear_predictors(vec, data.inputs, r, p, q)
    with np.errstate(over="ignore"):
        s.omega = np.exp(s.log_omega)
    bad = np.nonzero(~(np.isfinite(s.omega) & (s.omega > 0)))[0]
    if bad.size:
        raise DivergenceError(f"omega is not finite and positive at day {bad[0]}", int(bad[0]))
    s.phi_lam, s.phi_mu, s.gamma_lam, s.gamma_mu = arma_coefficients(vec, r, p, q)
    n = z.size
    s.log_lam, s.log_mu, s.lam, s.mu = (np.empty(n) for _ in range(4))
    bad = _kernels.unroll_from(0, n, s.lin_lam, s.lin_mu, vec[0], vec[1], s.phi_lam, s.phi_mu,
                               s.gamma_lam, s.gamma_mu, z, data.precip, s.omega,
                               s.log_lam, s.log_mu, s.lam, s.mu)
    if bad >= 0:
        raise DivergenceError(f"latent ARMA recursion diverged at day {bad}", int(bad))
    s.log_lik = _kernels.loglik_from(0, n, z, data.precip, s.omega, s.log_omega,
                                     s.log_lam, s.log_mu, s.lam, s.mu)
    return s


@dataclass
class ChainState:
    """Complete state of one chain; everything needed to continue it exactly."""

    theta: np.ndarray
    tau: Precisions
    z: np.ndarray
    dims: tuple
    rng: np.random.Generator
    adapt: AdaptState
    iteration: int = 0
    log_prior: float = 0.0
    series: _Series = None
    counters: dict = field(default_factory=lambda: {
        "selected": [0, 0, 0], "tau_accepted": 0, "z_changed": 0, "theta_evals": 0,
        "z_noop": 0,
    })

    @property
    def log_likelihood(self) -> float:
        return self.series.log_lik

    @property
    def log_posterior(self) -> float:
        return self.series.log_lik + self.log_prior

    @property
    def cached_series(self) -> ParamSeries:
        return ParamSeries(self.series.lam, self.series.mu, self.series.omega)

    @property
    def params(self) -> ModelParams:
        return ModelParams.from_vector(self.theta, *self.dims)

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state


def _log_prior(vec, tau: Precisions, prior_mean, n_beta, prior: PriorConfig) -> float:
    """Joint log prior of ``(theta, tau)``."""
    lp_tau = log_prior_tau(tau, prior)
    if lp_tau == -math.inf:
        return -math.inf
    d = vec - prior_mean
    ss_beta = float(np.dot(d[:n_beta], d[:n_beta]))
    ss_arma = float(np.dot(d[n_beta:], d[n_beta:]))
    n_arma = vec.size - n_beta
    lp = (0.5 * n_beta * math.log(tau.tau_beta) - 0.5 * tau.tau_beta * ss_beta
          - 0.5 * vec.size * math.log(2.0 * math.pi))
    if n_arma:
        lp += 0.5 * n_arma * math.log(tau.tau_arma) - 0.5 * tau.tau_arma * ss_arma
    return lp + lp_tau


def make_state(data: LocationData, theta, tau: Precisions, z, prior: PriorConfig,
               seed: int | None = None, rng=None, dims=None) -> ChainState:
    """Build a chain state, with its caches, from explicit values."""
    if isinstance(theta, ModelParams):
        dims = theta.dims
        vec = theta.to_vector()
    else:
        vec = np.asarray(theta, dtype=float).copy()
        if dims is None:
            raise ValueError("dims are required when theta is a plain vector")
    dims = tuple(int(d) for d in dims)
    if dims[0] != data.n_inputs:
        raise ValueError(f"theta has {dims[0]} regression weights but data has {data.n_inputs} inputs")
    z = np.ascontiguousarray(z, dtype=np.int64).copy()
    if z.shape != data.precip.shape:
        raise ValueError("latent counts and rainfall differ in length")
    if np.any((z == 0) != (data.precip == 0)):
        raise ValueError("latent counts must be zero exactly on dry days")
    if rng is None:
        rng = make_rng(0 if seed is None else seed)
    n_beta = 3 + 3 * dims[0]
    state = ChainState(vec, tau, z, dims, rng, AdaptState(2))
    state.series = _compute_series(vec, z, data, dims)
    state.log_prior = _log_prior(vec, tau, prior_mean_vector(prior, *dims), n_beta, prior)
    return state


def initial_state(data: LocationData, cfg: ChainConfig, prior: PriorConfig) -> tuple[ChainState, dict]:
    """Start-up values from moment estimates, falling back to the prior means."""
    dims = (data.n_inputs, cfg.p, cfg.q)
    info = {"estimates": True, "z_from_expectation": True}
    try:
        k = init_estimates(data.precip)
    except InitializationError as exc:
        log.info("moment estimates unavailable (%s); using prior means", exc)
        k = (prior.k0_lambda, prior.k0_mu, prior.k0_omega)
        info["estimates"] = False
    theta = ModelParams.constant(*k, *dims)
    z = None
    if info["estimates"]:
        try:
            z = init_latent_counts(data, theta)
        except (SeriesFailure, DivergenceError) as exc:
            log.info("latent count initialisation failed (%s)", exc)
    if z is None:
        info["z_from_expectation"] = False
        z = (data.precip > 0).astype(np.int64)
    rate_beta, rate_arma = prior.effective_rates()
    tau = Precisions(prior.tau_beta_shape / rate_beta,
                     prior.tau_arma_shift + prior.tau_arma_shape / rate_arma)
    return make_state(data, theta, tau, z, prior, seed=cfg.seed), info


class GibbsSampler:
    """Transition kernel of the random-scan Gibbs sampler for one data set."""

    def __init__(self, data: LocationData, cfg: ChainConfig, prior: PriorConfig | None = None):
        self.data = data
        self.cfg = cfg
        self.prior = prior or PriorConfig()
        self.dims = (data.n_inputs, cfg.p, cfg.q)
        self.n_days = len(data)
        self.n_params = n_params(*self.dims)
        self.n_beta = 3 + 3 * data.n_inputs
        self.prior_mean = prior_mean_vector(self.prior, *self.dims)
        w = cfg.resolved_scan_weights(self.n_days)
        self.scan_cumulative = np.cumsum(w / w.sum())
        self.max_lag = max(cfg.p, cfg.q)
        self.wet_days = np.nonzero(data.precip > 0)[0]
        self._scratch = [np.empty(self.n_days) for _ in range(4)]

    # -- blocks ---------------------------------------------------------------

    def _prior_sd(self, tau):
        sd = np.full(self.n_params, 1.0 / math.sqrt(tau.tau_arma))
        sd[:self.n_beta] = 1.0 / math.sqrt(tau.tau_beta)
        return sd

    def update_theta(self, state: ChainState) -> bool:
        rng = state.rng
        prior_draw = self.prior_mean + self._prior_sd(state.tau) * rng.standard_normal(self.n_params)
        last = {}

        def log_lik(vec):
            try:
                s = _compute_series(vec, state.z, self.data, self.dims)
            except DivergenceError:
                # proposals outside the region where the model is defined have zero likelihood
                return -math.inf
            last["vec"], last["series"] = vec, s
            return s.log_lik

        new, n_evals, _ = elliptical_slice_step(
            state.theta, self.prior_mean, prior_draw, log_lik, rng,
            current_log_lik=state.series.log_lik)
        state.counters["theta_evals"] += n_evals
        if "vec" in last and new is last["vec"]:
            state.theta = new
            state.series = last["series"]
            state.log_prior = _log_prior(new, state.tau, self.prior_mean, self.n_beta, self.prior)
            return True
        return False

    def _tau_from_unconstrained(self, u):
        return Precisions(math.exp(u[0]), self.prior.tau_arma_shift + math.exp(u[1]))

    def update_tau(self, state: ChainState) -> bool:
        shift = self.prior.tau_arma_shift

        def log_target(u):
            if not np.all(np.isfinite(u)) or u[0] > 700 or u[1] > 700:
                return -math.inf
            tau = self._tau_from_unconstrained(u)
            return _log_prior(state.theta, tau, self.prior_mean, self.n_beta, self.prior) + u[0] + u[1]

        u = np.array([math.log(state.tau.tau_beta), math.log(state.tau.tau_arma - shift)])
        new, _, accepted = adaptive_mh_step(u, log_target, state.adapt, state.rng)
        if accepted:
            state.tau = self._tau_from_unconstrained(new)
            state.log_prior = _log_prior(state.theta, state.tau, self.prior_mean, self.n_beta,
                                         self.prior)
            state.counters["tau_accepted"] += 1
        return accepted

    def update_z(self, state: ChainState) -> bool:
        t = int(state.rng.integers(self.n_days))
        if self.data.precip[t] == 0:
            state.counters["z_noop"] += 1
            return False
        s = state.series
        theta = state.theta
        n = self.n_days
        stop = n if self.cfg.z_horizon is None else min(n, t + 1 + self.cfg.z_horizon * self.max_lag)
        s_log_lam, s_log_mu, s_lam, s_mu = self._scratch
        y = self.data.precip
        z = state.z

        def log_pmf(v):
            return _kernels.z_conditional(
                t, v, stop, self.max_lag, s.lin_lam, s.lin_mu, theta[0], theta[1],
                s.phi_lam, s.phi_mu, s.gamma_lam, s.gamma_mu, z, y, s.omega, s.log_omega,
                s.log_lam, s.log_mu, s.lam, s.mu, s_log_lam, s_log_mu, s_lam, s_mu)

        old = int(z[t])
        new = integer_slice_step(old, log_pmf, 1, state.rng)
        if new == old:
            return False
        z[t] = new
        bad = _kernels.unroll_from(t + 1, n, s.lin_lam, s.lin_mu, theta[0], theta[1],
                                   s.phi_lam, s.phi_mu, s.gamma_lam, s.gamma_mu, z, y, s.omega,
                                   s.log_lam, s.log_mu, s.lam, s.mu)
        if bad >= 0:
            raise DivergenceError(f"latent ARMA recursion diverged at day {bad}", int(bad))
        s.log_lik = _kernels.loglik_from(0, n, z, y, s.omega, s.log_omega,
                                         s.log_lam, s.log_mu, s.lam, s.mu)
        state.counters["z_changed"] += 1
        return True

    # -- scan -----------------------------------------------------------------

    def select(self, rng) -> int:
        return int(np.searchsorted(self.scan_cumulative, rng.random(), side="right"))

    def step(self, state: ChainState) -> tuple[int, bool]:
        """Advance ``state`` in place by one step; return (component, moved)."""
        component = min(self.select(state.rng), 2)
        if component == THETA:
            moved = self.update_theta(state)
        elif component == TAU:
            moved = self.update_tau(state)
        else:
            moved = self.update_z(state)
        state.counters["selected"][component] += 1
        state.iteration += 1
        if not math.isfinite(state.log_posterior):
            raise KernelError(f"log posterior became {state.log_posterior} at step {state.iteration}")
        return component, moved


def gibbs_step(state: ChainState, data: LocationData, cfg: ChainConfig,
               prior: PriorConfig | None = None) -> ChainState:
    """One random-scan Gibbs step; randomness comes from ``state.rng``."""
    GibbsSampler(data, cfg, prior).step(state)
    return state


def data_fingerprint(data: LocationData) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.inputs, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(data.precip, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class SampleArchive:
    """Retained posterior draws and per-step traces of one chain."""

    theta: np.ndarray
    tau: np.ndarray
    draw_iterations: np.ndarray
    log_posterior: np.ndarray
    component: np.ndarray
    moved: np.ndarray
    final_theta: np.ndarray
    final_tau: np.ndarray
    final_z: np.ndarray
    meta: dict

    @property
    def dims(self) -> tuple:
        return tuple(self.meta["dims"])

    @property
    def n_draws(self) -> int:
        return self.theta.shape[0]

    def params(self, i: int) -> ModelParams:
        return ModelParams.from_vector(self.theta[i], *self.dims)

    def precisions(self, i: int) -> Precisions:
        return Precisions(float(self.tau[i, 0]), float(self.tau[i, 1]))

    _ARRAYS = ("theta", "tau", "draw_iterations", "log_posterior", "component", "moved",
               "final_theta", "final_tau", "final_z")

    def save(self, stem) -> None:
        """Write ``<stem>.npz`` (columns) and ``<stem>.json`` (metadata)."""
        stem = str(stem)
        tmp = stem + ".tmp.npz"
        np.savez(tmp, **{k: getattr(self, k) for k in self._ARRAYS})
        os.replace(tmp, stem + ".npz")
        with open(stem + ".json", "w") as fh:
            json.dump({"format": "cprain-archive", "version": ARCHIVE_VERSION, **self.meta},
                      fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, stem) -> "SampleArchive":
        stem = str(stem)
        with open(stem + ".json") as fh:
            meta = json.load(fh)
        if meta.pop("format", None) != "cprain-archive" or meta.pop("version", None) != ARCHIVE_VERSION:
            raise CheckpointError(f"{stem}.json is not a version {ARCHIVE_VERSION} sample archive")
        with np.load(stem + ".npz") as npz:
            arrays = {k: npz[k] for k in cls._ARRAYS}
        return cls(meta=meta, **arrays)


class Chain:
    """A resumable chain: state, kernel and the archive accumulated so far."""

    def __init__(self, data: LocationData, cfg: ChainConfig, prior: PriorConfig | None = None,
                 state: ChainState | None = None, location: str = ""):
        self.data = data
        self.cfg = cfg
        self.prior = prior or PriorConfig()
        self.location = location or data.location
        self.sampler = GibbsSampler(data, cfg, self.prior)
        self.init_info = {}
        if state is None:
            state, self.init_info = initial_state(data, cfg, self.prior)
        self.state = state
        n = cfg.n_steps
        self.log_posterior = np.full(n, np.nan)
        self.component = np.full(n, -1, dtype=np.int8)
        self.moved = np.zeros(n, dtype=np.int8)
        self.theta_draws = np.empty((cfg.n_draws, self.sampler.n_params))
        self.tau_draws = np.empty((cfg.n_draws, 2))
        self.draw_iterations = np.empty(cfg.n_draws, dtype=np.int64)
        self.n_recorded = 0

    @property
    def done(self) -> bool:
        return self.state.iteration >= self.cfg.n_steps

    def _record(self, i, component, moved):
        self.log_posterior[i] = self.state.log_posterior
        self.component[i] = component
        self.moved[i] = moved
        burn = self.cfg.n_burn_in
        if i >= burn and (i - burn) % self.cfg.thin == 0:
            j = self.n_recorded
            self.theta_draws[j] = self.state.theta
            self.tau_draws[j] = self.state.tau.as_array()
            self.draw_iterations[j] = i
            self.n_recorded += 1

    def run(self, n_steps: int | None = None, checkpoint_path=None, progress=None) -> None:
        """Advance up to ``n_steps`` steps (default: to the end of the run).

        With ``checkpoint_path`` a checkpoint is written every
        ``cfg.checkpoint_every`` steps and at the end. On a divergence or kernel
        error the state is written to ``<checkpoint_path>.crash`` first.
        """
        target = self.cfg.n_steps if n_steps is None else min(self.cfg.n_steps,
                                                             self.state.iteration + n_steps)
        every = self.cfg.checkpoint_every
        while self.state.iteration < target:
            i = self.state.iteration
            try:
                component, moved = self.sampler.step(self.state)
            except (DivergenceError, KernelError, SeriesFailure) as exc:
                if checkpoint_path is not None:
                    self.checkpoint(str(checkpoint_path) + ".crash", error=repr(exc))
                raise
            self._record(i, component, moved)
            if checkpoint_path is not None and every and self.state.iteration % every == 0:
                self.checkpoint(checkpoint_path)
            if progress is not None:
                progress(self.state.iteration)
        if checkpoint_path is not None:
            self.checkpoint(checkpoint_path)

    def archive(self) -> SampleArchive:
        n = self.n_recorded
        st = self.state
        meta = {
            "location": self.location,
            "dims": list(st.dims),
            "labels": ModelParams.labels(*st.dims),
            "n_days": len(self.data),
            "chain": self.cfg.to_dict(),
            "prior": self.prior.to_dict(),
            "scan_weights": self.sampler.scan_cumulative.tolist(),
            "iterations_run": st.iteration,
            "init": self.init_info,
            "counters": st.counters,
            "tau_acceptance_rate": st.adapt.acceptance_rate,
            "data_sha256": data_fingerprint(self.data),
        }
        return SampleArchive(
            self.theta_draws[:n].copy(), self.tau_draws[:n].copy(), self.draw_iterations[:n].copy(),
            self.log_posterior[:st.iteration].copy(), self.component[:st.iteration].copy(),
            self.moved[:st.iteration].copy(), st.theta.copy(), st.tau.as_array(), st.z.copy(), meta)

    # -- checkpointing --------------------------------------------------------

    def checkpoint(self, path, error: str | None = None) -> None:
        st = self.state
        meta = {
            "location": self.location,
            "dims": list(st.dims),
            "iteration": st.iteration,
            "tau": [st.tau.tau_beta, st.tau.tau_arma],
            "rng_state": st.rng.bit_generator.state,
            "adapt": {"n_seen": st.adapt.n_seen, "acceptance_count": st.adapt.acceptance_count,
                      "proposal_count": st.adapt.proposal_count},
            "counters": st.counters,
            "n_recorded": self.n_recorded,
            "chain": self.cfg.to_dict(),
            "prior": self.prior.to_dict(),
            "init": self.init_info,
            "data_sha256": data_fingerprint(self.data),
            "error": error,
        }
        k = st.iteration
        arrays = {
            "theta": st.theta, "z": st.z,
            "adapt_mean": st.adapt.running_mean, "adapt_sum_sq": st.adapt.sum_sq,
            "log_posterior": self.log_posterior[:k], "component": self.component[:k],
            "moved": self.moved[:k], "theta_draws": self.theta_draws[:self.n_recorded],
            "tau_draws": self.tau_draws[:self.n_recorded],
            "draw_iterations": self.draw_iterations[:self.n_recorded],
        }
        write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, meta, arrays)

    @classmethod
    def restore(cls, path, data: LocationData) -> "Chain":
        """Rebuild a chain from a checkpoint; continuing it is bit-identical.

        Raises
        ------
        CheckpointError
            On a corrupt or mismatched file, or when ``data`` is not the data
            set the checkpoint was made with.
        """
        meta, arrays = read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        try:
            if meta["data_sha256"] != data_fingerprint(data):
                raise CheckpointError(f"{path} was written for a different data set")
            chain_cfg = dict(meta["chain"])
            if chain_cfg.get("scan_weights") is not None:
                chain_cfg["scan_weights"] = tuple(chain_cfg["scan_weights"])
            cfg = ChainConfig(**chain_cfg)
            prior = PriorConfig(**meta["prior"])
            dims = tuple(meta["dims"])
            bitgen = np.random.PCG64()
            bitgen.state = meta["rng_state"]
            rng = np.random.Generator(bitgen)
            tau = Precisions(*meta["tau"])
            state = make_state(data, arrays["theta"], tau, arrays["z"], prior, rng=rng, dims=dims)
            a = meta["adapt"]
            state.adapt = AdaptState(2, a["n_seen"], arrays["adapt_mean"], arrays["adapt_sum_sq"],
                                     a["acceptance_count"], a["proposal_count"])
            state.iteration = int(meta["iteration"])
            state.counters = meta["counters"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
        chain = cls(data, cfg, prior, state=state, location=meta["location"])
        chain.init_info = meta["init"]
        k = state.iteration
        n = meta["n_recorded"]
        chain.log_posterior[:k] = arrays["log_posterior"]
        chain.component[:k] = arrays["component"]
        chain.moved[:k] = arrays["moved"]
        chain.theta_draws[:n] = arrays["theta_draws"]
        chain.tau_draws[:n] = arrays["tau_draws"]
        chain.draw_iterations[:n] = arrays["draw_iterations"]
        chain.n_recorded = n
        return chain


def run_chain(data: LocationData, cfg: ChainConfig, prior: PriorConfig | None = None,
              checkpoint_path=None, progress=None) -> SampleArchive:
    """Run a full chain and return its archive.

    If ``checkpoint_path`` names an existing checkpoint, the chain resumes
    from it; otherwise it starts from the moment-based initial values.
    """
    if len(data) < 1:
        raise ValueError("no data")
    if checkpoint_path is not None and os.path.exists(checkpoint_path):
        chain = Chain.restore(checkpoint_path, data)
    else:
        chain = Chain(data, cfg, prior)
    chain.run(checkpoint_path=checkpoint_path, progress=progress)
    return chain.archive()


def _lag1_autocorrelation(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 3:
        return None
    d = x - x.mean()
    denom = float(np.dot(d, d))
    if denom <= 0:
        return None
    return float(np.dot(d[:-1], d[1:]) / denom)


def diagnostics(archive: SampleArchive) -> dict:
    """Trace summaries for judging convergence by eye.

    Keys: ``log_posterior`` (trace), ``selection_frequency`` and
    ``acceptance`` per block, ``lag1_autocorrelation`` of the log posterior
    after burn-in (``None`` when undefined, with ``autocorrelation_defined``
    false), and ``monotone_start`` reporting whether the first tenth of the
    trace never decreases.
    """
    comp = np.asarray(archive.component)
    moved = np.asarray(archive.moved).astype(bool)
    n = comp.size
    freq, acc = {}, {}
    for k, name in enumerate(COMPONENTS):
        sel = comp == k
        freq[name] = float(sel.mean()) if n else 0.0
        acc[name] = float(moved[sel].mean()) if sel.any() else 0.0
    burn = int(archive.meta.get("chain", {}).get("n_burn_in", 0))
    trace = np.asarray(archive.log_posterior)
    ac = _lag1_autocorrelation(trace[burn:] if trace.size > burn else trace)
    head = trace[: max(2, n // 10)]
    counters = archive.meta.get("counters", {})
    theta_steps = counters.get("selected", [0, 0, 0])[0]
    return {
        "n_steps": n,
        "n_draws": archive.n_draws,
        "log_posterior": trace,
        "selection_frequency": freq,
        "acceptance": acc,
        "theta_evals_per_update": (counters.get("theta_evals", 0) / theta_steps) if theta_steps else 0.0,
        "lag1_autocorrelation": ac,
        "autocorrelation_defined": ac is not None,
        "monotone_start": bool(head.size > 1 and np.all(np.diff(head[np.isfinite(head)]) >= 0)),
    }
