"""Flat ``key = value`` run configuration.

Grammar, one entry per line::

    # comment
    section.key = value

Blank lines and ``#`` comments are ignored; whitespace around keys and values
is stripped; a key may appear once. Lists are comma separated. Command-line
``--set key=value`` overrides are applied after the file. Unknown keys are
an error so typos do not pass silently.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .gibbs import ChainConfig
from .priors import PriorConfig

__all__ = ["RunConfig", "parse_config", "load_config", "WORKERS_ENV", "DEFAULTS"]

WORKERS_ENV = "CPRAIN_WORKERS"

# key -> (type, default)
DEFAULTS = {
    "output_dir": (str, "run"),
    "seed": (int, 0),
    "workers": (int, None),
    "data.store": (str, ""),
    "data.precip_field": (str, "precip"),
    "data.inputs": (list, []),
    "locations": (str, "all"),
    "train.start": (str, ""),
    "train.end": (str, ""),
    "test.start": (str, ""),
    "test.end": (str, ""),
    "chain.n_steps": (int, 50_000),
    "chain.n_burn_in": (int, 15_000),
    "chain.thin": (int, 1),
    "chain.p": (int, 5),
    "chain.q": (int, 5),
    "chain.scan_weights": (list, []),
    "chain.checkpoint_every": (int, 5_000),
    "chain.z_horizon": (int, None),
    "prior.k0_lambda": (float, -0.46),
    "prior.k0_mu": (float, 1.44),
    "prior.k0_omega": (float, -0.45),
    "prior.tau_beta_shape": (float, 2.8),
    "prior.tau_beta_rate": (float, 1 / 2.3),
    "prior.tau_arma_shape": (float, 1.3),
    "prior.tau_arma_rate": (float, 1 / 65),
    "prior.tau_arma_shift": (float, 16.0),
    "prior.gamma_convention": (str, "shape_rate"),
    "forecast.members": (int, 100),
    "forecast.reset": (bool, False),
    "forecast.thresholds": (list, ["0.1", "1", "5", "15", "25"]),
    "evaluate.benchmark": (str, ""),
    "evaluate.benchmark_field": (str, "precip"),
    "evaluate.svg": (bool, False),
    "evaluate.thresholds": (list, ["5", "15", "25"]),
    "ingest.precip": (str, ""),
    "ingest.coarse": (str, ""),
    "ingest.inputs": (str, ""),
    "ingest.smooth_width": (int, 0),
    "ingest.metric": (str, "equirectangular"),
    "ingest.stats": (str, ""),
    "ingest.precip_unit": (str, "mm/day"),
    "ingest.export_csv": (str, ""),
    "simulate.rows": (int, 2),
    "simulate.cols": (int, 2),
    "simulate.n_days": (int, 730),
    "simulate.n_inputs": (int, 2),
    "simulate.p": (int, 1),
    "simulate.q": (int, 1),
    "simulate.theta": (list, []),
    "simulate.start": (str, "2000-01-01"),
}


def _convert(key, kind, raw):
    raw = raw.strip()
    try:
        if kind is str:
            return raw
        if kind is list:
            return [v.strip() for v in raw.split(",") if v.strip()]
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if raw.lower() in ("", "none"):
            return None
        if kind is int:
            return int(raw)
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("not finite")
        return v
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse config text into ``{key: raw string}``, checking keys and grammar."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in s.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: {key!r} set twice")
        out[key] = value
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_raw(cls, raw: dict) -> "RunConfig":
        values = {}
        for key, (kind, default) in DEFAULTS.items():
            values[key] = _convert(key, kind, raw[key]) if key in raw else default
        if values["workers"] is None:
            env = os.environ.get(WORKERS_ENV)
            values["workers"] = _convert(WORKERS_ENV, int, env) if env else 1
        cfg = cls(values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        v = self.values
        if v["workers"] is None or v["workers"] < 1:
            raise ConfigError("workers must be at least 1")
        if v["forecast.members"] < 1:
            raise ConfigError("forecast.members must be at least 1")
        try:
            self.chain_config()
            self.prior_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        for key in ("forecast.thresholds", "evaluate.thresholds", "simulate.theta"):
            try:
                [float(x) for x in v[key]]
            except ValueError:
                raise ConfigError(f"{key}: expected numbers") from None

    def chain_config(self, seed: int = 0) -> ChainConfig:
        v = self.values
        w = v["chain.scan_weights"]
        return ChainConfig(
            n_steps=v["chain.n_steps"], n_burn_in=v["chain.n_burn_in"], thin=v["chain.thin"],
            scan_weights=tuple(float(x) for x in w) if w else None, p=v["chain.p"], q=v["chain.q"],
            seed=seed, checkpoint_every=v["chain.checkpoint_every"], z_horizon=v["chain.z_horizon"])

    def prior_config(self) -> PriorConfig:
        v = self.values
        return PriorConfig(**{k.split(".", 1)[1]: v[k] for k in v if k.startswith("prior.")})

    def floats(self, key) -> list:
        return [float(x) for x in self.values[key]]

    def resolved_text(self) -> str:
        """Every key with its effective value, in the config grammar."""
        lines = []
        for key in DEFAULTS:
            val = self.values[key]
            if isinstance(val, list):
                val = ",".join(str(x) for x in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            elif val is None:
                val = "none"
            lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
        return "\n".join(lines) + "\n"


def load_config(path: str | None, overrides=()) -> RunConfig:
    raw = {}
    if path:
        try:
            with open(path) as fh:
                raw = parse_config(fh.read(), path)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"--set: unknown key {key!r}")
        raw[key] = value
    return RunConfig.from_raw(raw)
