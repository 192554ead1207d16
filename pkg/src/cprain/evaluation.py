"""Forecast verification for ensemble and deterministic rainfall forecasts.

Point errors use the ensemble median (or the raw value of a deterministic
benchmark). Probabilistic scores treat each (day, location) pair as an
independent event.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = [
    "mab",
    "rmsb",
    "SpreadSkill",
    "spread_skill",
    "RocCurve",
    "roc",
    "rank_auc",
    "exceedance_curve",
    "cross_correlation_map",
    "centre_of_mass_cell",
    "Heatmap",
    "log_density_heatmap",
    "event_base_rates",
    "season_of",
    "seasonal_masks",
    "align_calendars",
    "verification_report",
    "write_report",
    "SEASONS",
    "EVENT_THRESHOLDS",
]

SEASONS = ("DJF", "MAM", "JJA", "SON")
EVENT_THRESHOLDS = (5.0, 15.0, 25.0)
_MONTH_SEASON = {12: "DJF", 1: "DJF", 2: "DJF", 3: "MAM", 4: "MAM", 5: "MAM",
                 6: "JJA", 7: "JJA", 8: "JJA", 9: "SON", 10: "SON", 11: "SON"}


def _pair(forecast, observed):
    f = np.asarray(forecast, dtype=float).ravel()
    o = np.asarray(observed, dtype=float).ravel()
    if f.shape != o.shape:
        raise DataError(f"{f.size} forecasts but {o.size} observations")
    if f.size == 0:
        raise DataError("nothing to verify")
    return f, o


def mab(forecast, observed) -> float:
    """Mean absolute bias of point forecasts, pooled over all days and locations."""
    f, o = _pair(forecast, observed)
    return float(np.mean(np.abs(f - o)))


def rmsb(forecast, observed) -> float:
    """Root mean square bias of point forecasts."""
    f, o = _pair(forecast, observed)
    return float(math.sqrt(np.mean((f - o) ** 2)))


@dataclass
class SpreadSkill:
    rms_spread: np.ndarray
    rms_error: np.ndarray
    counts: np.ndarray


def spread_skill(ensembles, observed, n_bins: int = 16) -> SpreadSkill:
    """Binned ensemble spread against the error of the ensemble median.

    Parameters
    ----------
    ensembles : (N, M) array
        One row of ``M`` members per verified day.
    observed : (N,) array
    n_bins : int
        Days are sorted by spread and split into this many equally populated
        bins; when ``N`` is not a multiple, the leading bins take one extra day.

    Notes
    -----
    Spread is measured around the median, ``sigma**2 = mean((member - median)**2)``,
    which is never smaller than the usual variance about the mean.
    """
    e = np.asarray(ensembles, dtype=float)
    o = np.asarray(observed, dtype=float)
    if e.ndim != 2 or e.shape[0] != o.size:
        raise DataError("ensembles must be (N, M) with one observation per row")
    if e.shape[0] < n_bins:
        raise DataError(f"need at least {n_bins} days for {n_bins} bins")
    med = np.median(e, axis=1)
    spread2 = np.mean((e - med[:, None]) ** 2, axis=1)
    err2 = (med - o) ** 2
    order = np.argsort(spread2, kind="stable")
    bins = np.array_split(order, n_bins)
    return SpreadSkill(np.array([math.sqrt(spread2[b].mean()) for b in bins]),
                       np.array([math.sqrt(err2[b].mean()) for b in bins]),
                       np.array([b.size for b in bins]))


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float


def roc(prob_forecasts, events) -> RocCurve:
    """ROC curve sweeping every distinct forecast probability.

    An event is predicted when the probability is at least the threshold.
    Thresholds are the distinct probabilities together with 0, 1 and
    ``+inf``; the curve therefore runs from (0, 0) to (1, 1). AUC is the
    trapezoid area, equal to the rank statistic with ties counted as one half.
    """
    p = np.asarray(prob_forecasts, dtype=float).ravel()
    ev = np.asarray(events, dtype=bool).ravel()
    if p.shape != ev.shape:
        raise DataError("probabilities and events differ in length")
    n_pos = int(ev.sum())
    n_neg = ev.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both events and non-events")
    thr = np.unique(np.concatenate([p, [0.0, 1.0, np.inf]]))[::-1]
    order = np.argsort(-p, kind="stable")
    ps, es = p[order], ev[order]
    # number of forecasts with p >= threshold, for each threshold
    n_pred = np.searchsorted(-ps, -thr, side="right")
    cum_pos = np.concatenate([[0], np.cumsum(es)])
    tp = cum_pos[n_pred]
    fp = n_pred - tp
    tpr, fpr = tp / n_pos, fp / n_neg
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(thr, tpr, fpr, auc)


def rank_auc(prob_forecasts, events) -> float:
    """Probability that an event day outranks a non-event day (ties count half)."""
    p = np.asarray(prob_forecasts, dtype=float).ravel()
    ev = np.asarray(events, dtype=bool).ravel()
    pos, neg = p[ev], p[~ev]
    if pos.size == 0 or neg.size == 0:
        raise DataError("AUC needs both events and non-events")
    return float((np.sum(pos[:, None] > neg[None, :])
                  + 0.5 * np.sum(pos[:, None] == neg[None, :])) / (pos.size * neg.size))


def exceedance_curve(series, x_grid) -> np.ndarray:
    """Empirical ``P(y > x)`` for each ``x``, pooling every entry of ``series``."""
    s = np.sort(np.asarray(series, dtype=float).ravel())
    if s.size == 0:
        raise DataError("empty series")
    x = np.asarray(x_grid, dtype=float)
    return 1.0 - np.searchsorted(s, x, side="right") / s.size


def centre_of_mass_cell(mask) -> tuple[int, int]:
    """Masked-in cell nearest the centroid of all masked-in cells."""
    cells = np.argwhere(np.asarray(mask, dtype=bool))
    if cells.size == 0:
        raise DataError("mask selects no cells")
    centre = cells.mean(axis=0)
    i, j = cells[np.argmin(((cells - centre) ** 2).sum(axis=1))]
    return int(i), int(j)


def cross_correlation_map(values, reference, mask=None) -> np.ndarray:
    """Lag-0 Pearson correlation of every cell's series with a reference cell.

    ``values`` is ``(T, H, W)``. Cells that are masked out or have constant
    series get NaN.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 3 or v.shape[0] < 2:
        raise DataError("values must be (T, H, W) with T >= 2")
    i, j = reference
    d = v - v.mean(axis=0)
    ref = d[:, i, j]
    num = np.tensordot(ref, d, axes=(0, 0))
    den = np.sqrt(np.sum(ref**2) * np.sum(d**2, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / den, np.nan)
    out = np.clip(out, -1.0, 1.0)
    if mask is not None:
        out = np.where(np.asarray(mask, dtype=bool), out, np.nan)
    return out


@dataclass
class Heatmap:
    """2-d histogram on ``ln(y + 1)`` axes; rows index the forecast."""

    edges: np.ndarray
    counts: np.ndarray

    @property
    def edges_mm(self) -> np.ndarray:
        return np.expm1(self.edges)

    @property
    def log_density(self) -> np.ndarray:
        """Natural log of the normalised density; ``-inf`` on empty bins."""
        width = np.diff(self.edges)
        dens = self.counts / (self.counts.sum() * np.outer(width, width))
        with np.errstate(divide="ignore"):
            return np.log(dens)


def log_density_heatmap(forecast, observed, n_bins: int = 50, max_value=None) -> Heatmap:
    f, o = _pair(forecast, observed)
    if np.any(f < 0) or np.any(o < 0):
        raise DataError("rainfall must be non-negative")
    top = math.log1p(max(float(f.max()), float(o.max())) if max_value is None else max_value)
    if top <= 0:
        top = 1.0
    edges = np.linspace(0.0, top, n_bins + 1)
    counts, _, _ = np.histogram2d(np.log1p(f), np.log1p(o), bins=[edges, edges])
    return Heatmap(edges, counts.astype(np.int64))


def event_base_rates(observed, thresholds=EVENT_THRESHOLDS) -> dict:
    """Fraction of days with rainfall above each threshold (mm)."""
    o = np.asarray(observed, dtype=float).ravel()
    if o.size == 0:
        raise DataError("empty series")
    return {float(x): float(np.mean(o > x)) for x in thresholds}


def season_of(calendar) -> np.ndarray:
    months = np.asarray(calendar, dtype="datetime64[M]").astype(int) % 12 + 1
    return np.array([_MONTH_SEASON[m] for m in months])


def seasonal_masks(calendar) -> dict:
    """``{"all": ..., "DJF": ..., ...}`` boolean masks over days."""
    s = season_of(calendar)
    out = {"all": np.ones(s.size, dtype=bool)}
    out.update({name: s == name for name in SEASONS})
    return out


def align_calendars(forecast_dates, observed_dates) -> np.ndarray:
    """Index into ``observed_dates`` for every forecast date.

    Raises
    ------
    DataError
        If any forecast date has no observation.
    """
    fd = np.asarray(forecast_dates, dtype="datetime64[D]")
    od = np.asarray(observed_dates, dtype="datetime64[D]")
    order = np.argsort(od)
    pos = np.searchsorted(od[order], fd)
    pos = np.clip(pos, 0, od.size - 1)
    idx = order[pos]
    missing = od[idx] != fd
    if np.any(missing):
        raise DataError(f"{int(missing.sum())} forecast dates have no observation, "
                        f"first {fd[np.argmax(missing)]}")
    return idx


def verification_report(forecasts: dict, observations: dict, calendars: dict,
                        thresholds=EVENT_THRESHOLDS, x_grid=None, n_bins: int = 16) -> dict:
    """Pooled metrics across locations, for the whole year and each season.

    Parameters
    ----------
    forecasts : dict
        Location id to either an ``(M, T)`` ensemble array or a ``(T,)``
        deterministic series.
    observations : dict
        Location id to ``(T,)`` observed rainfall aligned with the forecast.
    calendars : dict
        Location id to the ``(T,)`` forecast dates.
    """
    if not forecasts:
        raise DataError("no forecasts to evaluate")
    x_grid = np.linspace(0, 50, 101) if x_grid is None else np.asarray(x_grid, dtype=float)
    point, obs, season, members, probs = [], [], [], [], {x: [] for x in thresholds}
    ensemble = None
    for loc, fc in forecasts.items():
        fc = np.asarray(fc, dtype=float)
        is_ens = fc.ndim == 2
        if ensemble is None:
            ensemble = is_ens
        elif ensemble != is_ens:
            raise DataError("mixing ensemble and deterministic forecasts")
        o = np.asarray(observations[loc], dtype=float)
        n = fc.shape[-1]
        if o.size != n:
            raise DataError(f"location {loc}: {n} forecast days but {o.size} observations")
        point.append(np.median(fc, axis=0) if is_ens else fc)
        obs.append(o)
        season.append(season_of(calendars[loc]))
        members.append(fc.T if is_ens else fc[:, None])
        for x in thresholds:
            probs[x].append((fc > x).mean(axis=0) if is_ens else (fc > x).astype(float))
    point, obs, season = np.concatenate(point), np.concatenate(obs), np.concatenate(season)
    members = np.concatenate(members, axis=0)
    probs = {x: np.concatenate(v) for x, v in probs.items()}
    report = {"kind": "ensemble" if ensemble else "deterministic", "n_locations": len(forecasts),
              "roc_convention": "days and locations pooled as independent events",
              "periods": {}}
    for name, sel in [("all", np.ones(obs.size, bool))] + [(s, season == s) for s in SEASONS]:
        if not sel.any():
            report["periods"][name] = {"n_days": 0}
            continue
        entry = {"n_days": int(sel.sum()), "mab": mab(point[sel], obs[sel]),
                 "rmsb": rmsb(point[sel], obs[sel]),
                 "base_rates": {f"{x:g}": v for x, v in event_base_rates(obs[sel], thresholds).items()},
                 "auc": {}}
        for x in thresholds:
            ev = obs[sel] > x
            entry["auc"][f"{x:g}"] = (roc(probs[x][sel], ev).auc
                                      if 0 < ev.sum() < ev.size else None)
        report["periods"][name] = entry
    report["exceedance"] = {"x": x_grid.tolist(),
                            "observed": exceedance_curve(obs, x_grid).tolist(),
                            "forecast": exceedance_curve(members, x_grid).tolist()}
    if ensemble and obs.size >= n_bins:
        ss = spread_skill(members, obs, n_bins)
        report["spread_skill"] = {"rms_spread": ss.rms_spread.tolist(),
                                  "rms_error": ss.rms_error.tolist(),
                                  "counts": ss.counts.tolist()}
    return report


def write_report(report: dict, out_dir, svg: bool = False) -> list:
    """Write ``metrics.json``, ``metrics.csv`` and ``exceedance.csv`` (and SVGs).

    Returns the paths written.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, "metrics.json")
    with open(p, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    paths.append(p)
    p = os.path.join(out_dir, "metrics.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        periods = ["all", *SEASONS]
        w.writerow(["metric", *periods])
        first = report["periods"]["all"]
        w.writerow(["mab", *[report["periods"][s].get("mab", "") for s in periods]])
        w.writerow(["rmsb", *[report["periods"][s].get("rmsb", "") for s in periods]])
        for x in first.get("auc", {}):
            w.writerow([f"auc_gt_{x}", *[report["periods"][s].get("auc", {}).get(x, "")
                                         for s in periods]])
        for x in first.get("base_rates", {}):
            w.writerow([f"base_rate_gt_{x}", *[report["periods"][s].get("base_rates", {}).get(x, "")
                                               for s in periods]])
    paths.append(p)
    p = os.path.join(out_dir, "exceedance.csv")
    ex = report["exceedance"]
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "observed", "forecast"])
        w.writerows(zip(ex["x"], ex["observed"], ex["forecast"]))
    paths.append(p)
    if "spread_skill" in report:
        p = os.path.join(out_dir, "spread_skill.csv")
        ss = report["spread_skill"]
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "rms_spread", "rms_error", "count"])
            w.writerows(zip(range(len(ss["counts"])), ss["rms_spread"], ss["rms_error"], ss["counts"]))
        paths.append(p)
    if svg:
        paths += _render_svg(report, out_dir)
    return paths


def _render_svg(report, out_dir) -> list:
    import os

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    ex = report["exceedance"]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(ex["x"], ex["observed"], label="observed")
    ax.semilogy(ex["x"], ex["forecast"], label="forecast")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("P(precipitation > x)")
    ax.legend()
    p = os.path.join(out_dir, "exceedance.svg")
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)
    if "spread_skill" in report:
        ss = report["spread_skill"]
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(ss["rms_spread"], ss["rms_error"], "o")
        top = max(max(ss["rms_spread"]), max(ss["rms_error"]), 1e-9)
        ax.plot([0, top], [0, top], "k--", lw=0.8)
        ax.set_xlabel("RMS spread (mm)")
        ax.set_ylabel("RMS error (mm)")
        p = os.path.join(out_dir, "spread_skill.svg")
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    return paths
