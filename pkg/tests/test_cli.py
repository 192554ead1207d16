import json
import os
import shutil

import numpy as np
import pytest

from cprain import cli
from cprain.config import DEFAULTS, load_config, parse_config
from cprain.errors import ConfigError, DivergenceError
from cprain.forecast import ForecastEnsemble
from cprain.gibbs import SampleArchive
from cprain.grid import FieldSet, GridTimeSeries, MODEL_FIELDS, read_grid, write_grid, write_grid_csv

BASE = [
    "seed=5", "simulate.rows=2", "simulate.cols=2", "simulate.n_days=400",
    "chain.n_steps=300", "chain.n_burn_in=100", "chain.p=1", "chain.q=1",
    "chain.checkpoint_every=100",
    "train.end=2000-09-30", "test.start=2000-10-01", "forecast.members=20",
]


def run(command, out_dir, *extra):
    argv = [command]
    for item in [f"output_dir={out_dir}", *BASE, *extra]:
        argv += ["--set", item]
    return cli.main(argv)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run"))
    assert run("simulate", out) == 0
    assert run("train", out) == 0
    assert run("forecast", out) == 0
    return out


def archive_bytes(out):
    d = os.path.join(out, "archives")
    return {n: open(os.path.join(d, n), "rb").read() for n in sorted(os.listdir(d))
            if n.endswith(".npz")}


def forecast_bytes(out):
    d = os.path.join(out, "forecasts")
    return {n: ForecastEnsemble.load(os.path.join(d, n[:-4])).members.tobytes()
            for n in sorted(os.listdir(d)) if n.endswith(".npz")}


class TestConfig:
    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match="3"):
            parse_config("seed = 1\n# comment\nchain.bogus = 2\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="twice"):
            parse_config("seed = 1\nseed = 2\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config("seed 1\n")

    def test_defaults_and_overrides(self, monkeypatch):
        monkeypatch.delenv("CPRAIN_WORKERS", raising=False)
        cfg = load_config(None, ["chain.p=2", "forecast.thresholds=1, 2.5"])
        assert cfg["chain.p"] == 2 and cfg["chain.q"] == 5 and cfg["workers"] == 1
        assert cfg.floats("forecast.thresholds") == [1.0, 2.5]
        assert cfg.prior_config().tau_beta_shape == 2.8

    def test_workers_from_environment(self, monkeypatch):
        monkeypatch.setenv("CPRAIN_WORKERS", "3")
        assert load_config(None)["workers"] == 3
        assert load_config(None, ["workers=2"])["workers"] == 2

    def test_resolved_text_round_trips(self, tmp_path):
        cfg = load_config(None, ["chain.scan_weights=1,0.5,2", "prior.k0_mu=1.25", "workers=1"])
        path = tmp_path / "c.cfg"
        path.write_text(cfg.resolved_text())
        again = load_config(str(path))
        assert again.values == cfg.values

    @pytest.mark.parametrize("item", ["chain.n_steps=abc", "chain.n_burn_in=999999", "workers=0",
                                      "prior.gamma_convention=odd", "forecast.members=0",
                                      "nonsense=1", "noequals"])
    def test_bad_values_exit_2(self, item, tmp_path):
        assert cli.main(["report", "--set", f"output_dir={tmp_path}", "--set", item]) == 2

    def test_unreadable_config_exit_2(self, tmp_path):
        assert cli.main(["report", "--config", str(tmp_path / "missing.cfg")]) == 2

    def test_every_default_is_typed(self):
        for key, (kind, _) in DEFAULTS.items():
            assert kind in (int, float, str, bool, list), key


class TestPipeline:
    def test_outputs(self, pipeline):
        out = pipeline
        assert sorted(archive_bytes(out)) == ["0_0.npz", "0_1.npz", "1_0.npz", "1_1.npz"]
        status = json.load(open(os.path.join(out, "train_status.json")))
        assert all(s["status"] == "done" for s in status.values())
        arc = SampleArchive.load(os.path.join(out, "archives", "1_0"))
        assert arc.n_draws == 200 and arc.meta["n_days"] == 274
        ens = ForecastEnsemble.load(os.path.join(out, "forecasts", "1_0"))
        assert ens.members.shape == (20, 126)
        assert str(ens.calendar[0]) == "2000-10-01"
        assert os.path.exists(os.path.join(out, "forecasts", "1_0.summary.csv"))
        for command in ("simulate", "train", "forecast"):
            assert os.path.exists(os.path.join(out, f"config.{command}.resolved"))

    def test_workers_do_not_change_results(self, pipeline, tmp_path):
        other = str(tmp_path)
        assert run("simulate", other) == 0
        assert run("train", other, "workers=2") == 0
        assert run("forecast", other, "workers=2") == 0
        assert archive_bytes(other) == archive_bytes(pipeline)
        assert forecast_bytes(other) == forecast_bytes(pipeline)

    def test_kill_and_resume(self, pipeline, tmp_path, monkeypatch):
        other = str(tmp_path)
        assert run("simulate", other) == 0
        original = cli.Chain.run

        def interrupted(self, n_steps=None, checkpoint_path=None, progress=None):
            original(self, 150, checkpoint_path=checkpoint_path)
            raise KeyboardInterrupt

        monkeypatch.setattr(cli.Chain, "run", interrupted)
        with pytest.raises(KeyboardInterrupt):
            run("train", other)
        monkeypatch.setattr(cli.Chain, "run", original)
        assert os.path.exists(os.path.join(other, "checkpoints", "0_0.chk"))
        assert run("train", other) == 0
        status = json.load(open(os.path.join(other, "train_status.json")))
        assert status["0_0"]["resumed"] == "step 150"
        assert archive_bytes(other) == archive_bytes(pipeline)

    def test_divergent_location_is_isolated(self, pipeline, tmp_path, monkeypatch):
        other = str(tmp_path)
        assert run("simulate", other) == 0
        original = cli.Chain.run

        def diverge_one(self, *args, **kwargs):
            if self.location == "0_1":
                raise DivergenceError("latent ARMA recursion diverged at day 7", 7)
            return original(self, *args, **kwargs)

        monkeypatch.setattr(cli.Chain, "run", diverge_one)
        assert run("train", other) == 4
        failures = json.load(open(os.path.join(other, "failures.json")))
        assert list(failures) == ["0_1"] and failures["0_1"]["status"] == "diverged"
        good = archive_bytes(other)
        assert sorted(good) == ["0_0.npz", "1_0.npz", "1_1.npz"]
        reference = archive_bytes(pipeline)
        assert all(good[k] == reference[k] for k in good)

    def test_self_evaluation_is_perfect(self, pipeline, tmp_path):
        store = read_grid(os.path.join(pipeline, "store.cptgrid"))
        precip = store["precip"]
        bench = str(tmp_path / "bench.cptgrid")
        write_grid(bench, FieldSet({"precip": precip}))
        assert run("evaluate", pipeline, f"evaluate.benchmark={bench}") == 0
        rep = json.load(open(os.path.join(pipeline, "evaluation_benchmark", "metrics.json")))
        assert rep["periods"]["all"]["mab"] == 0.0 and rep["periods"]["all"]["rmsb"] == 0.0
        assert all(v in (1.0, None) for v in rep["periods"]["all"]["auc"].values())
        assert any(v == 1.0 for v in rep["periods"]["all"]["auc"].values())

    def test_evaluate_and_report(self, pipeline):
        assert run("evaluate", pipeline, "evaluate.svg=true") == 0
        rep = json.load(open(os.path.join(pipeline, "evaluation", "metrics.json")))
        assert rep["kind"] == "ensemble" and rep["periods"]["all"]["n_days"] == 4 * 126
        assert run("report", pipeline) == 0
        first = open(os.path.join(pipeline, "report.json")).read()
        assert run("report", pipeline) == 0
        assert open(os.path.join(pipeline, "report.json")).read() == first
        report = json.loads(first)
        assert report["schema_version"] == 1 and len(report["locations"]) == 4
        assert "evaluation" in report["metrics"]

    def test_missing_observation_dates_exit_3(self, pipeline, tmp_path):
        store = read_grid(os.path.join(pipeline, "store.cptgrid"))
        short = FieldSet()
        for name in store:
            g = store[name]
            short.add(name, GridTimeSeries(g.times[:-10], g.lat, g.lon, g.values[:-10], g.unit, g.mask))
        path = str(tmp_path / "short.cptgrid")
        write_grid(path, short)
        assert run("evaluate", pipeline, f"data.store={path}") == 3

    def test_forecast_uses_the_archived_training_window(self, pipeline, tmp_path):
        other = str(tmp_path / "copy")
        shutil.copytree(pipeline, other)
        shutil.rmtree(os.path.join(other, "forecasts"))
        # no train.end or test.start: history comes from the archive, the test window follows it
        argv = ["forecast"]
        for item in [f"output_dir={other}", *(b for b in BASE if not b.startswith(("train.", "test.")))]:
            argv += ["--set", item]
        assert cli.main(argv) == 0
        assert forecast_bytes(other) == forecast_bytes(pipeline)

    def test_forecast_refuses_changed_training_data(self, pipeline, tmp_path, capsys):
        store = read_grid(os.path.join(pipeline, "store.cptgrid"))
        changed = FieldSet()
        for name in store:
            g = store[name]
            v = g.values.copy()
            if name == "precip":
                v[0] = v[0] + 1.0
            changed.add(name, GridTimeSeries(g.times, g.lat, g.lon, v, g.unit, g.mask))
        path = str(tmp_path / "changed.cptgrid")
        write_grid(path, changed)
        other = str(tmp_path / "copy")
        shutil.copytree(pipeline, other)
        assert run("forecast", other, f"data.store={path}") == 3
        assert "differ" in capsys.readouterr().err


class TestEmpty:
    def test_report_on_empty_directory(self, tmp_path):
        assert cli.main(["report", "--set", f"output_dir={tmp_path}"]) == 0
        report = json.load(open(tmp_path / "report.json"))
        assert report == {"schema_version": 1, "locations": {}, "configs": {}, "metrics": {}}

    def test_train_without_store_exit_3(self, tmp_path):
        assert run("train", str(tmp_path)) == 3

    def test_forecast_without_archives_exit_3(self, tmp_path):
        assert run("simulate", str(tmp_path)) == 0
        assert run("forecast", str(tmp_path)) == 3

    def test_bad_cell_selection_exit_2(self, tmp_path):
        assert run("simulate", str(tmp_path)) == 0
        assert run("train", str(tmp_path), "locations=cell:9,9") == 2


def daily_inputs(times, lat, lon, rng):
    fs = FieldSet()
    for k in range(2):
        fs.add(f"x{k}", GridTimeSeries(times, lat, lon, rng.standard_normal((times.size, lat.size, lon.size)), "1"))
    return fs


class TestIngest:
    def grids(self, rng, n_days=30):
        times = np.datetime64("2001-01-01", "s") + np.arange(n_days) * np.timedelta64(1, "D")
        lat, lon = np.array([52.0, 52.1, 52.2]), np.array([-4.0, -3.9, -3.8])
        mask = np.ones((3, 3), bool)
        mask[0, 0] = False
        rain = np.where(rng.random((n_days, 3, 3)) < 0.5, 0.0, rng.exponential(3, (n_days, 3, 3)))
        precip = GridTimeSeries(times, lat, lon, rain, "mm/day", mask)
        return precip, daily_inputs(times, lat, lon, rng)

    def test_csv_round_trip_through_store(self, rng, tmp_path):
        precip, inputs = self.grids(rng)
        write_grid_csv(tmp_path / "precip.csv", FieldSet({"precip": precip}))
        write_grid_csv(tmp_path / "inputs.csv", inputs)
        argv = ["ingest", "--set", f"output_dir={tmp_path}",
                "--set", f"ingest.precip={tmp_path / 'precip.csv'}",
                "--set", f"ingest.inputs={tmp_path / 'inputs.csv'}",
                "--set", f"ingest.export_csv={tmp_path / 'store.csv'}"]
        assert cli.main(argv) == 0
        store = read_grid(tmp_path / "store.cptgrid")
        assert store.names() == ["precip", "x0", "x1"]
        m = precip.mask
        assert store["precip"].values[:, m].tobytes() == precip.values[:, m].tobytes()
        assert not store["precip"].mask[0, 0]
        assert (tmp_path / "store.csv").exists()

    def test_unit_mismatch_exit_3(self, rng, tmp_path):
        precip, inputs = self.grids(rng)
        precip.unit = "m/s"
        write_grid_csv(tmp_path / "precip.csv", FieldSet({"precip": precip}))
        write_grid_csv(tmp_path / "inputs.csv", inputs)
        argv = ["ingest", "--set", f"output_dir={tmp_path}",
                "--set", f"ingest.precip={tmp_path / 'precip.csv'}",
                "--set", f"ingest.inputs={tmp_path / 'inputs.csv'}"]
        assert cli.main(argv) == 3

    def test_malformed_csv_exit_3(self, tmp_path, capsys):
        (tmp_path / "precip.csv").write_text("time,lat,lon,field,unit,value\n"
                                             "2001-01-01T00:00:00,52,-4,precip,mm/day,x\n")
        argv = ["ingest", "--set", f"output_dir={tmp_path}",
                "--set", f"ingest.precip={tmp_path / 'precip.csv'}",
                "--set", f"ingest.inputs={tmp_path / 'precip.csv'}"]
        assert cli.main(argv) == 3
        assert "line 2" in capsys.readouterr().err

    def test_no_inputs_exit_2(self, rng, tmp_path):
        precip, _ = self.grids(rng)
        write_grid(tmp_path / "precip.cptgrid", FieldSet({"precip": precip}))
        argv = ["ingest", "--set", f"output_dir={tmp_path}",
                "--set", f"ingest.precip={tmp_path / 'precip.cptgrid'}"]
        assert cli.main(argv) == 2

    def test_coarse_pipeline(self, rng, tmp_path):
        precip, _ = self.grids(rng, n_days=3)
        times6 = np.datetime64("2001-01-01", "s") + np.arange(12) * np.timedelta64(6, "h")
        clat, clon = np.linspace(51.9, 52.3, 5), np.linspace(-4.1, -3.7, 5)
        coarse = FieldSet()
        for k, name in enumerate(MODEL_FIELDS):
            coarse.add(name, GridTimeSeries(times6, clat, clon,
                                            rng.standard_normal((12, 5, 5)) + k, f"u{k}"))
        write_grid(tmp_path / "coarse.cptgrid", coarse)
        write_grid(tmp_path / "precip.cptgrid", FieldSet({"precip": precip}))
        argv = ["ingest", "--set", f"output_dir={tmp_path}",
                "--set", f"ingest.precip={tmp_path / 'precip.cptgrid'}",
                "--set", f"ingest.coarse={tmp_path / 'coarse.cptgrid'}"]
        assert cli.main(argv) == 0
        store = read_grid(tmp_path / "store.cptgrid")
        assert len(store.names()) == 1 + len(MODEL_FIELDS) + 3
        stats = json.load(open(tmp_path / "store.cptgrid.stats.json"))
        assert set(stats["mean"]) == set(store.names()) - {"precip"}
