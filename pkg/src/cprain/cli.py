"""Command-line driver: ``cprain {ingest,simulate,train,forecast,evaluate,report}``.

Every command takes ``--config FILE`` and any number of ``--set key=value``
overrides (see :mod:`cprain.config`) and writes the fully resolved
configuration into the output directory.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence in at least one location (details in ``failures.json``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .arma import ModelParams
from .config import RunConfig, load_config
from .errors import (CheckpointError, ConfigError, CpRainError, DataError, DivergenceError,
                     KernelError, SeriesFailure)
from .evaluation import align_calendars, verification_report, write_report
from .forecast import ForecastEnsemble, ensemble_summaries, posterior_predictive
from .gibbs import Chain, SampleArchive, data_fingerprint, diagnostics
from .grid import (FieldSet, GridTimeSeries, MODEL_FIELDS, Standardization, SyntheticSpec,
                   location_series, preprocess, read_grid, read_grid_csv, synthesize, write_grid,
                   write_grid_csv)
from .seeding import mix_seed

log = logging.getLogger("cprain")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
REPORT_SCHEMA_VERSION = 1


# -- helpers ------------------------------------------------------------------


def _echo_config(cfg: RunConfig, out_dir: str, command: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"config.{command}.resolved"), "w") as fh:
        fh.write(cfg.resolved_text())


def _read_fields(path: str, expected_units=None) -> FieldSet:
    if not path:
        raise ConfigError("a required data path is not set")
    if not os.path.exists(path):
        raise DataError(f"{path} does not exist")
    if path.lower().endswith(".csv"):
        return read_grid_csv(path, expected_units)
    fs = read_grid(path)
    for name, unit in (expected_units or {}).items():
        if name in fs and fs[name].unit != unit:
            raise DataError(f"{path}: field {name} has unit {fs[name].unit!r}, expected {unit!r}")
    return fs


def _store_path(cfg: RunConfig) -> str:
    return cfg["data.store"] or os.path.join(cfg["output_dir"], "store.cptgrid")


def _load_store(cfg: RunConfig):
    fs = _read_fields(_store_path(cfg))
    precip = fs[cfg["data.precip_field"]]
    names = cfg["data.inputs"] or [n for n in fs.names() if n != cfg["data.precip_field"]]
    if not names:
        raise DataError("store has no input fields")
    inputs = FieldSet({n: fs[n] for n in names})
    return inputs, precip, names


def _period(times, start: str, end: str):
    days = times.astype("datetime64[D]")
    sel = np.ones(days.size, dtype=bool)
    if start:
        sel &= days >= np.datetime64(start, "D")
    if end:
        sel &= days <= np.datetime64(end, "D")
    idx = np.nonzero(sel)[0]
    if idx.size == 0:
        raise ConfigError(f"period {start or '...'} to {end or '...'} selects no days")
    if np.any(np.diff(idx) != 1):
        raise DataError("selected period is not contiguous")
    return int(idx[0]), int(idx[-1]) + 1


def _select_cells(cfg: RunConfig, precip: GridTimeSeries) -> list:
    spec = cfg["locations"].strip()
    mask = precip.mask
    if spec == "all":
        cells = np.argwhere(mask)
    elif spec.startswith("bbox:"):
        try:
            lat0, lat1, lon0, lon1 = (float(v) for v in spec[5:].split(","))
        except ValueError:
            raise ConfigError("locations = bbox:lat_min,lat_max,lon_min,lon_max") from None
        inside = ((precip.lat[:, None] >= lat0) & (precip.lat[:, None] <= lat1)
                  & (precip.lon[None, :] >= lon0) & (precip.lon[None, :] <= lon1))
        cells = np.argwhere(mask & inside)
    elif spec.startswith("cell:"):
        try:
            cells = [tuple(int(v) for v in c.split(",")) for c in spec[5:].split(";")]
        except ValueError:
            raise ConfigError("locations = cell:row,col[;row,col...]") from None
        for r, c in cells:
            if not (0 <= r < mask.shape[0] and 0 <= c < mask.shape[1]) or not mask[r, c]:
                raise ConfigError(f"cell {r},{c} is outside the grid or masked out")
        cells = np.array(cells)
    else:
        raise ConfigError(f"unknown location selection {spec!r}")
    return [(int(r), int(c)) for r, c in cells]


def _map(fn, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# -- ingest -------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> int:
    precip_field = cfg["data.precip_field"]
    pf = _read_fields(cfg["ingest.precip"], {precip_field: cfg["ingest.precip_unit"]})
    precip = pf[precip_field]
    store = FieldSet({precip_field: precip})
    stats = None
    if cfg["ingest.coarse"]:
        coarse = _read_fields(cfg["ingest.coarse"])
        missing = [n for n in MODEL_FIELDS if n not in coarse]
        if missing:
            raise DataError(f"coarse fields missing: {missing}")
        reuse = None
        if cfg["ingest.stats"]:
            with open(cfg["ingest.stats"]) as fh:
                reuse = Standardization.from_dict(json.load(fh))
        inputs, stats = preprocess(coarse, precip.lat, precip.lon, precip.mask,
                                   cfg["ingest.smooth_width"], reuse, cfg["ingest.metric"])
    elif cfg["ingest.inputs"]:
        inputs = _read_fields(cfg["ingest.inputs"])
    else:
        raise ConfigError("set ingest.coarse (six-hourly model fields) or ingest.inputs (daily inputs)")
    for name in inputs:
        g = inputs[name]
        if not g.same_grid(precip):
            if (np.array_equal(g.lat, precip.lat) and np.array_equal(g.lon, precip.lon)
                    and np.array_equal(g.times.astype("datetime64[D]"),
                                       precip.times.astype("datetime64[D]"))):
                g = GridTimeSeries(precip.times, g.lat, g.lon, g.values, g.unit, g.mask)
            else:
                raise DataError(f"input {name!r} is not on the rainfall grid and calendar")
        if np.any(precip.mask & ~g.mask):
            raise DataError(f"input {name!r} is missing on rainfall cells")
        store.add(name, g)
    path = _store_path(cfg)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_grid(path, store)
    if stats is not None:
        with open(path + ".stats.json", "w") as fh:
            json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
    if cfg["ingest.export_csv"]:
        write_grid_csv(cfg["ingest.export_csv"], store)
    _echo_config(cfg, cfg["output_dir"], "ingest")
    print(f"wrote {path}: {len(store.names()) - 1} inputs, {precip.values.shape[0]} days, "
          f"{int(precip.mask.sum())} cells")
    return EXIT_OK


# -- simulate -----------------------------------------------------------------


def default_truth(n_inputs: int, p: int, q: int) -> ModelParams:
    theta = ModelParams.constant(-0.46, 1.44, -0.45, n_inputs, p, q)
    theta.beta_lambda[:] = 0.3
    theta.beta_mu[:] = 0.15
    theta.beta_omega[:] = 0.05
    theta.phi_lambda[:] = 0.2 / max(p, 1)
    theta.phi_mu[:] = 0.1 / max(p, 1)
    theta.gamma_lambda[:] = 0.1 / max(q, 1)
    theta.gamma_mu[:] = 0.05 / max(q, 1)
    return theta


def cmd_simulate(cfg: RunConfig) -> int:
    r, p, q = cfg["simulate.n_inputs"], cfg["simulate.p"], cfg["simulate.q"]
    if cfg["simulate.theta"]:
        try:
            truth = ModelParams.from_vector(cfg.floats("simulate.theta"), r, p, q)
        except ValueError as exc:
            raise ConfigError(f"simulate.theta: {exc}") from None
    else:
        truth = default_truth(r, p, q)
    rows, cols = cfg["simulate.rows"], cfg["simulate.cols"]
    spec = SyntheticSpec(cfg["simulate.n_days"], r, start=cfg["simulate.start"])
    locs, record = synthesize(truth, spec, cfg["seed"], (rows, cols))
    times = locs[0].calendar.astype("datetime64[s]")
    lat = 52.0 + 0.1 * np.arange(rows)
    lon = -4.0 + 0.1 * np.arange(cols)
    y = np.stack([l.precip for l in locs], axis=1).reshape(-1, rows, cols)
    x = np.stack([l.inputs for l in locs], axis=1).reshape(-1, rows, cols, r)
    store = FieldSet({cfg["data.precip_field"]: GridTimeSeries(times, lat, lon, y, "mm/day")})
    for k in range(r):
        store.add(f"x{k + 1}", GridTimeSeries(times, lat, lon, x[..., k], "1"))
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    path = _store_path(cfg)
    write_grid(path, store)
    with open(os.path.join(out, "truth.json"), "w") as fh:
        json.dump(record, fh, sort_keys=True)
    _echo_config(cfg, out, "simulate")
    wet = float(np.mean(y > 0))
    print(f"wrote {path} and truth.json: {rows}x{cols} cells, {spec.n_days} days, wet fraction {wet:.3f}")
    return EXIT_OK


# -- train --------------------------------------------------------------------


def _train_task(task):
    (store, precip_field, names, row, col, start, stop, chain_kw, prior, out_dir) = task
    loc = f"{row}_{col}"
    archive_stem = os.path.join(out_dir, "archives", loc)
    ckpt = os.path.join(out_dir, "checkpoints", f"{loc}.chk")
    status = {"location": loc, "row": row, "col": col}
    try:
        if os.path.exists(archive_stem + ".json"):
            status["status"] = "done"
            status["resumed"] = "archive"
            return status
        fs = read_grid(store)
        inputs = FieldSet({n: fs[n] for n in names})
        data = location_series(inputs, fs[precip_field], row, col, names).slice(start, stop)
        from .gibbs import ChainConfig

        cfg = ChainConfig(**chain_kw)
        if os.path.exists(ckpt):
            chain = Chain.restore(ckpt, data)
            status["resumed"] = f"step {chain.state.iteration}"
        else:
            chain = Chain(data, cfg, prior, location=loc)
        chain.run(checkpoint_path=ckpt)
        arc = chain.archive()
        arc.meta["train_window"] = [int(start), int(stop)]
        if data.calendar is not None:
            arc.meta["train_dates"] = [str(data.calendar[0]), str(data.calendar[-1])]
        arc.save(archive_stem)
        d = diagnostics(arc)
        status.update(status="done", acceptance=d["acceptance"],
                      lag1_autocorrelation=d["lag1_autocorrelation"])
    except (DivergenceError, KernelError, SeriesFailure) as exc:
        status.update(status="diverged", error=f"{type(exc).__name__}: {exc}")
    except (CpRainError, OSError, ValueError) as exc:
        status.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return status


def cmd_train(cfg: RunConfig) -> int:
    inputs, precip, names = _load_store(cfg)
    start, stop = _period(precip.times, cfg["train.start"], cfg["train.end"])
    cells = _select_cells(cfg, precip)
    out = cfg["output_dir"]
    for sub in ("archives", "checkpoints"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    _echo_config(cfg, out, "train")
    prior = cfg.prior_config()
    tasks = []
    for row, col in cells:
        kw = cfg.chain_config(seed=mix_seed(cfg["seed"], row, col)).to_dict()
        if kw["scan_weights"] is not None:
            kw["scan_weights"] = tuple(kw["scan_weights"])
        tasks.append((_store_path(cfg), cfg["data.precip_field"], names, row, col, start, stop,
                      kw, prior, out))
    statuses = _map(_train_task, tasks, cfg["workers"])
    summary = {s["location"]: s for s in statuses}
    with open(os.path.join(out, "train_status.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    bad = {k: v for k, v in summary.items() if v["status"] != "done"}
    n_ok = len(summary) - len(bad)
    print(f"trained {n_ok}/{len(summary)} locations")
    if bad:
        with open(os.path.join(out, "failures.json"), "w") as fh:
            json.dump(bad, fh, indent=2, sort_keys=True)
        for k, v in sorted(bad.items()):
            print(f"  {k}: {v['status']}: {v['error']}", file=sys.stderr)
        if any(v["status"] == "diverged" for v in bad.values()):
            return EXIT_DIVERGENCE
        return EXIT_DATA
    return EXIT_OK


# -- forecast -----------------------------------------------------------------


def _forecast_task(task):
    (store, precip_field, names, row, col, train, test, members, seed, reset, thresholds,
     out_dir) = task
    loc = f"{row}_{col}"
    fs = read_grid(store)
    inputs = FieldSet({n: fs[n] for n in names})
    full = location_series(inputs, fs[precip_field], row, col, names)
    arc = SampleArchive.load(os.path.join(out_dir, "archives", loc))
    # the chain's own training window, so the carried latent state lines up
    history = full.slice(*arc.meta.get("train_window", train))
    if data_fingerprint(history) != arc.meta.get("data_sha256"):
        raise DataError(f"{loc}: training data in the store differ from those the archive was fitted to")
    future = full.slice(*test)
    ens = posterior_predictive(arc, history, future.inputs, members, seed=seed, reset=reset,
                               calendar=future.calendar)
    stem = os.path.join(out_dir, "forecasts", loc)
    ens.save(stem)
    if ens.n_members >= 20:
        ensemble_summaries(ens, thresholds).to_csv(stem + ".summary.csv", future.calendar)
    return loc


def cmd_forecast(cfg: RunConfig) -> int:
    inputs, precip, names = _load_store(cfg)
    train = _period(precip.times, cfg["train.start"], cfg["train.end"])
    out = cfg["output_dir"]
    cells = [c for c in _select_cells(cfg, precip)
             if os.path.exists(os.path.join(out, "archives", f"{c[0]}_{c[1]}.json"))]
    if not cells:
        raise DataError(f"no archives under {os.path.join(out, 'archives')}; run train first")
    test_start = cfg["test.start"]
    if not test_start:
        # default: the days following the training window
        with open(os.path.join(out, "archives", f"{cells[0][0]}_{cells[0][1]}.json")) as fh:
            window = json.load(fh).get("train_window", train)
        if window[1] >= precip.times.size:
            raise ConfigError("training window reaches the end of the data; set test.start")
        test_start = str(precip.times[window[1]].astype("datetime64[D]"))
    test = _period(precip.times, test_start, cfg["test.end"])
    os.makedirs(os.path.join(out, "forecasts"), exist_ok=True)
    _echo_config(cfg, out, "forecast")
    tasks = [(_store_path(cfg), cfg["data.precip_field"], names, r, c, train, test,
              cfg["forecast.members"], mix_seed(cfg["seed"], r, c, 1), cfg["forecast.reset"],
              cfg.floats("forecast.thresholds"), out) for r, c in cells]
    done = _map(_forecast_task, tasks, cfg["workers"])
    print(f"forecast {len(done)} locations, {cfg['forecast.members']} members, "
          f"{test[1] - test[0]} days")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------------


def cmd_evaluate(cfg: RunConfig) -> int:
    inputs, precip, names = _load_store(cfg)
    out = cfg["output_dir"]
    _echo_config(cfg, out, "evaluate")
    obs_days = precip.times.astype("datetime64[D]")
    forecasts, observations, calendars = {}, {}, {}
    if cfg["evaluate.benchmark"]:
        bench = _read_fields(cfg["evaluate.benchmark"])[cfg["evaluate.benchmark_field"]]
        if not (np.array_equal(bench.lat, precip.lat) and np.array_equal(bench.lon, precip.lon)):
            raise DataError("benchmark is not on the rainfall grid")
        days = bench.times.astype("datetime64[D]")
        test = (days >= np.datetime64(cfg["test.start"], "D")) if cfg["test.start"] else np.ones(days.size, bool)
        if cfg["test.end"]:
            test &= days <= np.datetime64(cfg["test.end"], "D")
        idx = align_calendars(days[test], obs_days)
        for r, c in _select_cells(cfg, precip):
            loc = f"{r}_{c}"
            forecasts[loc] = bench.values[test, r, c]
            observations[loc] = precip.values[idx, r, c]
            calendars[loc] = days[test]
        target = os.path.join(out, "evaluation_benchmark")
    else:
        fdir = os.path.join(out, "forecasts")
        for r, c in _select_cells(cfg, precip):
            loc = f"{r}_{c}"
            if not os.path.exists(os.path.join(fdir, loc + ".json")):
                continue
            ens = ForecastEnsemble.load(os.path.join(fdir, loc))
            idx = align_calendars(ens.calendar, obs_days)
            forecasts[loc] = ens.members
            observations[loc] = precip.values[idx, r, c]
            calendars[loc] = ens.calendar
        if not forecasts:
            raise DataError(f"no forecasts under {fdir}; run forecast first")
        target = os.path.join(out, "evaluation")
    report = verification_report(forecasts, observations, calendars,
                                 thresholds=cfg.floats("evaluate.thresholds"))
    write_report(report, target, svg=cfg["evaluate.svg"])
    a = report["periods"]["all"]
    print(f"MAB {a['mab']:.4f} mm, RMSB {a['rmsb']:.4f} mm over {a['n_days']} location-days")
    return EXIT_OK


# -- report -------------------------------------------------------------------


def build_report(run_dir: str) -> dict:
    report = {"schema_version": REPORT_SCHEMA_VERSION, "locations": {}, "configs": {},
              "metrics": {}}
    if not os.path.isdir(run_dir):
        return report
    status_path = os.path.join(run_dir, "train_status.json")
    if os.path.exists(status_path):
        with open(status_path) as fh:
            report["locations"] = json.load(fh)
    for name in sorted(os.listdir(run_dir)):
        if name.startswith("config.") and name.endswith(".resolved"):
            with open(os.path.join(run_dir, name)) as fh:
                report["configs"][name[len("config."):-len(".resolved")]] = fh.read()
    for sub in ("evaluation", "evaluation_benchmark"):
        p = os.path.join(run_dir, sub, "metrics.json")
        if os.path.exists(p):
            with open(p) as fh:
                report["metrics"][sub] = json.load(fh)["periods"]
    fdir = os.path.join(run_dir, "forecasts")
    if os.path.isdir(fdir):
        report["forecasts"] = sorted(n[:-5] for n in os.listdir(fdir) if n.endswith(".json"))
    return report


def cmd_report(cfg: RunConfig) -> int:
    out = cfg["output_dir"]
    report = build_report(out)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"report: {len(report['locations'])} locations, metrics for {sorted(report['metrics'])}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "simulate": cmd_simulate, "train": cmd_train,
            "forecast": cmd_forecast, "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cprain", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a configuration key")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, KernelError, SeriesFailure) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
