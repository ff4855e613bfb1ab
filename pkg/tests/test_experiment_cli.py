import csv
import json
import os

import numpy as np
import pytest
import yaml

from mpmmtt.cli import main
from mpmmtt.experiment import (METRIC_COLUMNS, RUN_COLUMNS, ConfigError, ExperimentConfig,
                               compare_modes, config_from_dict, dump_config, load_config,
                               run_experiment, run_sweep, sweep_points)

SMALL = {"version": 1, "runs": 2, "seed": 5, "workers": 1,
         "scenario": {"kind": "parallel", "n_targets": 2, "spacing": 300.0, "n_scans": 15},
         "tracker": {"r_max": 2}}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults(self):
        cfg = config_from_dict({"version": 1})
        assert cfg.runs == 100 and cfg.tracker.window == 10 and cfg.scenario.kind == "table1"

    def test_round_trip(self):
        cfg = config_from_dict(dict(SMALL, sweep={"P_d": [0.8, 0.9]}))
        again = config_from_dict(yaml.safe_load(dump_config(cfg)))
        assert again == cfg
        assert again.digest() == cfg.digest()

    def test_repo_configs_load(self):
        root = os.path.join(os.path.dirname(__file__), "..", "configs")
        for name in sorted(os.listdir(root)):
            cfg = load_config(os.path.join(root, name))
            assert isinstance(cfg, ExperimentConfig)

    @pytest.mark.parametrize("patch, path", [
        ({"version": 2}, "version"),
        ({"runs": 0}, "runs"),
        ({"runs": "many"}, "runs"),
        ({"scenario": {"P_d": "high"}}, "scenario.P_d"),
        ({"scenario": {"P_d": 1.5}}, "scenario"),
        ({"scenario": {"kind": "ring"}}, "scenario.kind"),
        ({"tracker": {"delta_c": 0.1}}, "tracker"),
        ({"tracker": {"windw": 5}}, "tracker.windw"),
        ({"metrics": {"c": "x"}}, "metrics.c"),
        ({"sweep": {"P_d": [0.5, 2.0]}}, "sweep.P_d"),
        ({"sweep": {"omega": [0.1]}}, "sweep.omega"),
        ({"extra": 1}, "extra"),
    ])
    def test_diagnostics_name_the_field(self, patch, path):
        data = dict(SMALL)
        for k, v in patch.items():
            data[k] = dict(data.get(k) or {}, **v) if isinstance(v, dict) and k != "sweep" \
                else v
        with pytest.raises(ConfigError) as err:
            config_from_dict(data)
        assert str(err.value).startswith(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="^<file>"):
            load_config(str(tmp_path / "missing.yaml"))
        bad = tmp_path / "bad.yaml"
        bad.write_text("runs: [1,\n")
        with pytest.raises(ConfigError, match="not valid YAML"):
            load_config(str(bad))


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    summary = run_experiment(config_from_dict(SMALL), out=str(out))
    return out, summary


class TestRun:
    def test_files(self, small_run):
        out, summary = small_run
        assert sorted(os.listdir(out)) == ["metrics.csv", "runs.csv", "series.csv",
                                           "summary.json"]
        rows = read_rows(out / "runs.csv")
        assert list(rows[0]) == RUN_COLUMNS
        assert [int(r["seed"]) for r in rows] == [5, 6]
        series = read_rows(out / "series.csv")
        assert len(series) == 15 and float(series[0]["N_true"]) == 2.0
        assert summary["seeds"] == [5, 6] and len(summary["config_hash"]) == 16

    def test_aggregates_recomputable(self, small_run):
        out, _ = small_run
        rows = read_rows(out / "runs.csv")
        summary = json.loads((out / "summary.json").read_text())
        for c in METRIC_COLUMNS:
            assert abs(np.mean([float(r[c]) for r in rows]) - summary["mean"][c]) < 1e-12

    def test_single_run_deterministic(self, tmp_path):
        cfg = config_from_dict(dict(SMALL, runs=1))
        for d in ("a", "b"):
            run_experiment(cfg, out=str(tmp_path / d))
        for name in ("metrics.csv", "series.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_one_row_per_point(tmp_path):
    cfg = config_from_dict(dict(SMALL, runs=1, sweep={"clutter_density": [1e-4, 5e-4],
                                                      "r_max": [0, 1]}))
    assert len(sweep_points(cfg)) == 4
    rows = run_sweep(cfg, out=str(tmp_path))
    written = read_rows(tmp_path / "sweep.csv")
    assert len(rows) == len(written) == 4
    assert [(float(r["clutter_density"]), int(r["r_max"])) for r in written] == \
        [(1e-4, 0), (1e-4, 1), (5e-4, 0), (5e-4, 1)]


def test_sweep_spacing_needs_parallel(tmp_path):
    cfg = config_from_dict({"version": 1, "runs": 1, "sweep": {"spacing": [100.0]}})
    with pytest.raises(ConfigError, match="^sweep"):
        run_sweep(cfg, out=str(tmp_path))


def test_compare_modes_paired_rows(tmp_path):
    deltas = compare_modes(config_from_dict(dict(SMALL, runs=1)), out=str(tmp_path))
    rows = read_rows(tmp_path / "paired.csv")
    assert [r["mode"] for r in rows] == ["open_loop", "closed_loop", "realtime"]
    assert len({r["seed"] for r in rows}) == 1
    assert set(deltas["mean"]) == {"open_loop", "closed_loop", "realtime"}


class TestCLI:
    def test_run(self, tmp_path, capsys):
        path = write_cfg(tmp_path, SMALL)
        code = main(["run", path, "--runs", "1", "--out", str(tmp_path / "o"),
                     "--mode", "realtime"])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["runs"] == 1
        assert len(read_rows(tmp_path / "o" / "runs.csv")) == 1

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        path = write_cfg(tmp_path, dict(SMALL, tracker={"r_max": -1}))
        assert main(["run", path]) == 2
        assert "tracker" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.yaml")]) == 2

    def test_unwritable_output(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        path = write_cfg(tmp_path, dict(SMALL, runs=1))
        assert main(["run", path, "--out", str(blocker / "sub")]) == 1
        assert "cannot create" in capsys.readouterr().err

    def test_bad_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["run", "x.yaml", "--mode", "later"])
        assert exc.value.code != 0
