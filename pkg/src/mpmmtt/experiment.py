"""Experiment configuration, Monte Carlo execution and result files.

A configuration is a YAML document::

    version: 1
    runs: 100
    seed: 0
    workers: 4
    out: results
    scenario: {kind: table1, P_d: 0.95, clutter_density: 1.0e-4}
    tracker: {r_max: 10, output: smoothed}
    metrics: {gate_distance: 100.0, p: 2.0, c: 100.0}
    sweep: {clutter_density: [1.0e-4, 2.0e-4]}

Run ``i`` uses seed ``seed + i``. Rows are merged by run index, so the
written files do not depend on the number of workers.
"""

import csv
import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .metrics import evaluate
from .simulator import ScenarioSpec, TargetSpec, parallel_scenario, table1_scenario
from .tracker import MPMMTTracker, TrackerConfig

SCHEMA_VERSION = 1
METRIC_COLUMNS = ["NVT", "TPD", "NFT", "NTB", "MAER", "DAER", "AEE_P", "AEE_V",
                  "MOSPA", "TET_s"]
RUN_COLUMNS = ["run_id", "seed"] + METRIC_COLUMNS
SERIES_COLUMNS = ["k", "OSPA", "MAER", "DAER", "N_est", "N_true"]
SWEEP_KEYS = {
    "P_d": "scenario",
    "clutter_density": "scenario",
    "clutter_rate": "scenario",
    "spacing": "scenario",
    "n_targets": "scenario",
    "r_max": "tracker",
}
SCENARIO_KINDS = ("table1", "parallel", "custom")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


@dataclass
class ScenarioConfig:
    kind: str = "table1"
    n_targets: int = 4
    spacing: float = 100.0
    targets: list = None
    n_scans: int = 40
    T: float = 1.0
    range_bounds: tuple = (13000.0, 19000.0)
    azimuth_bounds: tuple = (0.7, 1.0)
    R: tuple = (400.0, 1e-6)
    P_d: float = 0.95
    clutter_density: float = 1e-4
    clutter_rate: float = None
    omega: float = 0.087
    q_pos: float = 0.01
    q_vel: float = 0.005
    ct_noise_scale: float = 10.0
    process_noise: bool = False

    _SPEC_FIELDS = ("n_scans", "T", "range_bounds", "azimuth_bounds", "R", "P_d",
                    "clutter_density", "clutter_rate", "omega", "q_pos", "q_vel",
                    "ct_noise_scale", "process_noise")

    def build(self):
        """The :class:`ScenarioSpec` this configuration describes."""
        kw = {k: getattr(self, k) for k in self._SPEC_FIELDS}
        if self.kind == "table1":
            return table1_scenario(**kw)
        if self.kind == "parallel":
            n_scans = kw.pop("n_scans")
            return parallel_scenario(self.n_targets, self.spacing, n_scans, **kw)
        if self.kind == "custom":
            if not self.targets:
                raise ConfigError("scenario.targets: required for kind 'custom'")
            tgts = [TargetSpec(t["initial"], t["birth"], t["death"],
                               [tuple(s) for s in t["schedule"]])
                    for t in self.targets]
            return ScenarioSpec(targets=tgts, **kw)
        raise ConfigError("scenario.kind: expected one of %s, got %r"
                          % (", ".join(SCENARIO_KINDS), self.kind))


@dataclass
class MetricConfig:
    gate_distance: float = 100.0
    p: float = 2.0
    c: float = 100.0


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    runs: int = 100
    seed: int = 0
    workers: int = 1
    out: str = "results"
    sweep: dict = None
    version: int = SCHEMA_VERSION

    def to_dict(self):
        d = {"version": self.version, "runs": self.runs, "seed": self.seed,
             "workers": self.workers, "out": self.out,
             "scenario": _plain(asdict(self.scenario)),
             "tracker": _plain(asdict(self.tracker)),
             "metrics": _plain(asdict(self.metrics))}
        if self.sweep:
            d["sweep"] = _plain(self.sweep)
        return d

    def digest(self):
        """Short hash of the configuration, recorded with the results."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v


def _section(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("%s: expected a mapping" % path)
    known = {f.name: f for f in fields(cls) if not f.name.startswith("_")}
    kw = {}
    for k, v in data.items():
        if k not in known:
            raise ConfigError("%s.%s: unknown field" % (path, k))
        default = known[k].default
        if isinstance(default, tuple):
            if not isinstance(v, (list, tuple)):
                raise ConfigError("%s.%s: expected a list" % (path, k))
            v = _tupled(list(v))
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError("%s.%s: expected true or false" % (path, k))
        elif isinstance(default, (int, float)) and v is not None:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError("%s.%s: expected a number, got %r" % (path, k, v))
            if isinstance(default, float):
                v = float(v)
        kw[k] = v
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("%s: %s" % (path, exc)) from None


def config_from_dict(data):
    """Validate a parsed document and build an :class:`ExperimentConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping")
    data = dict(data)
    version = data.pop("version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError("version: expected %d, got %r" % (SCHEMA_VERSION, version))
    scen = _section(ScenarioConfig, data.pop("scenario", None), "scenario")
    if scen.kind not in SCENARIO_KINDS:
        raise ConfigError("scenario.kind: expected one of %s, got %r"
                          % (", ".join(SCENARIO_KINDS), scen.kind))
    trk = _section(TrackerConfig, data.pop("tracker", None), "tracker")
    met = _section(MetricConfig, data.pop("metrics", None), "metrics")
    sweep = data.pop("sweep", None)
    top = {}
    for key, kind in (("runs", int), ("seed", int), ("workers", int), ("out", str)):
        if key in data:
            v = data.pop(key)
            if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
                raise ConfigError("%s: expected an integer, got %r" % (key, v))
            if kind is str and not isinstance(v, str):
                raise ConfigError("%s: expected a string" % key)
            top[key] = v
    if data:
        raise ConfigError("%s: unknown field" % sorted(data)[0])
    cfg = ExperimentConfig(scen, trk, met, sweep=_check_sweep(sweep), **top)
    if cfg.runs < 1:
        raise ConfigError("runs: must be at least 1")
    if cfg.workers < 1:
        raise ConfigError("workers: must be at least 1")
    try:
        cfg.scenario.build()
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError("scenario: %s" % exc) from None
    return cfg


def _check_sweep(sweep):
    if sweep is None:
        return None
    if not isinstance(sweep, dict) or not sweep:
        raise ConfigError("sweep: expected a non-empty mapping of parameter lists")
    out = {}
    for k, vals in sweep.items():
        if k not in SWEEP_KEYS:
            raise ConfigError("sweep.%s: not a sweepable parameter (choose from %s)"
                              % (k, ", ".join(SWEEP_KEYS)))
        if not isinstance(vals, list) or not vals:
            raise ConfigError("sweep.%s: expected a non-empty list" % k)
        for v in vals:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError("sweep.%s: non-numeric value %r" % (k, v))
        if k == "P_d" and not all(0 <= v <= 1 for v in vals):
            raise ConfigError("sweep.P_d: values must lie in [0, 1]")
        if k in ("clutter_density", "clutter_rate", "spacing") and min(vals) < 0:
            raise ConfigError("sweep.%s: values must be non-negative" % k)
        if k in ("n_targets", "r_max"):
            if not all(float(v).is_integer() and v >= 0 for v in vals):
                raise ConfigError("sweep.%s: values must be non-negative integers" % k)
            vals = [int(v) for v in vals]
        out[k] = list(vals)
    return out


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>: cannot read %s: %s" % (path, exc.strerror)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>: not valid YAML: %s" % exc) from None
    return config_from_dict(data)


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def with_overrides(cfg, scenario=None, tracker=None, **top):
    """Copy of ``cfg`` with some scenario, tracker or top-level fields replaced."""
    d = cfg.to_dict()
    d["scenario"].update(scenario or {})
    d["tracker"].update(tracker or {})
    d.update({k: v for k, v in top.items() if v is not None})
    return config_from_dict(_plain(d))


# ----------------------------------------------------------------------
# execution

def run_single(scenario, tracker_cfg, metric_cfg, run_id, seed):
    """Simulate, track and score one run.

    Returns ``(row, series)``; ``row`` maps :data:`RUN_COLUMNS` to values.
    """
    from .simulator import simulate
    truth, frames = simulate(scenario, seed)
    mods = scenario.motion_models()
    trk = MPMMTTracker(tracker_cfg, [mods["CV"], mods["CT"]], scenario.sensor())
    t0 = time.perf_counter()
    est = trk.run(frames)
    elapsed = time.perf_counter() - t0
    rep, series = evaluate(est, truth, frames, metric_cfg.gate_distance,
                           metric_cfg.p, metric_cfg.c, elapsed)
    series["N_true"] = truth.alive.sum(axis=0).astype(float)
    row = {"run_id": run_id, "seed": seed}
    row.update(rep.as_dict())
    return row, series


def _job(args):
    return run_single(*args)


def monte_carlo(cfg, workers=None):
    """All runs of ``cfg``; results are ordered by run index."""
    scenario = cfg.scenario.build()
    jobs = [(scenario, cfg.tracker, cfg.metrics, i, cfg.seed + i)
            for i in range(cfg.runs)]
    workers = cfg.workers if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def aggregate(rows):
    """Arithmetic mean of each metric column."""
    return {c: float(np.mean([r[c] for r in rows])) for c in METRIC_COLUMNS}


def mean_series(results):
    K = len(results[0][1]["OSPA"])
    out = {"k": np.arange(1, K + 1, dtype=float)}
    for c in SERIES_COLUMNS[1:]:
        stack = np.vstack([s[c] for _, s in results])
        with np.errstate(all="ignore"):
            # MAER/DAER are undefined at scans without a valid track
            out[c] = np.array([np.nanmean(col) if np.any(np.isfinite(col)) else np.nan
                               for col in stack.T])
    return out


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _ensure_dir(out):
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise OSError("cannot create output directory %s: %s" % (out, exc.strerror))
    if not os.access(out, os.W_OK):
        raise OSError("output directory %s is not writable" % out)


def write_results(cfg, results, out, wall_time, prefix=""):
    """Write the run files for one Monte Carlo batch.

    ``runs.csv`` holds every column including the tracker wall time;
    ``metrics.csv`` drops ``TET_s`` and is reproducible byte-for-byte.
    """
    _ensure_dir(out)
    rows = [r for r, _ in results]
    write_csv(os.path.join(out, prefix + "runs.csv"), RUN_COLUMNS, rows)
    write_csv(os.path.join(out, prefix + "metrics.csv"), RUN_COLUMNS[:-1], rows)
    series = mean_series(results)
    srows = [{c: series[c][i] for c in SERIES_COLUMNS} for i in range(len(series["k"]))]
    for r in srows:
        r["k"] = int(r["k"])
    write_csv(os.path.join(out, prefix + "series.csv"), SERIES_COLUMNS, srows)
    summary = {
        "config_hash": cfg.digest(),
        "runs": cfg.runs,
        "seeds": [r["seed"] for r in rows],
        "wall_time_s": wall_time,
        "mean": aggregate(rows),
    }
    with open(os.path.join(out, prefix + "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def run_experiment(cfg, out=None, workers=None):
    """Monte Carlo runs of ``cfg`` written to ``out``; returns the summary."""
    out = cfg.out if out is None else out
    _ensure_dir(out)
    t0 = time.perf_counter()
    results = monte_carlo(cfg, workers)
    return write_results(cfg, results, out, time.perf_counter() - t0)


COMPARE_MODES = {
    "open_loop": {"r_max": 0, "output": "smoothed"},
    "closed_loop": {"r_max": 3, "output": "smoothed"},
    "realtime": {"r_max": 3, "output": "realtime"},
}


def compare_modes(cfg, out=None, workers=None):
    """Paired runs under open-loop, closed-loop and real-time output.

    Writes ``paired.csv`` (one row per seed per mode) and ``deltas.json``
    with the mean paired differences; returns the deltas.
    """
    out = cfg.out if out is None else out
    _ensure_dir(out)
    per_mode = {}
    for mode, over in COMPARE_MODES.items():
        per_mode[mode] = [r for r, _ in monte_carlo(with_overrides(cfg, tracker=over),
                                                    workers)]
    rows = []
    for i in range(cfg.runs):
        for mode in COMPARE_MODES:
            r = dict(per_mode[mode][i])
            r["mode"] = mode
            rows.append(r)
    write_csv(os.path.join(out, "paired.csv"), ["mode"] + RUN_COLUMNS[:-1], rows)

    def delta(a, b, col):
        return float(np.mean([x[col] - y[col] for x, y in zip(per_mode[a], per_mode[b])]))

    deltas = {
        "config_hash": cfg.digest(),
        "mean": {m: aggregate(per_mode[m]) for m in COMPARE_MODES},
        "MOSPA_closed_minus_open": delta("closed_loop", "open_loop", "MOSPA"),
        "MAER_closed_minus_open": delta("closed_loop", "open_loop", "MAER"),
        "MOSPA_smoothed_minus_realtime": delta("closed_loop", "realtime", "MOSPA"),
    }
    with open(os.path.join(out, "deltas.json"), "w") as fh:
        json.dump(deltas, fh, indent=2, sort_keys=True)
    return deltas


def sweep_points(cfg):
    """Cartesian grid of the ``sweep`` section as a list of dicts."""
    if not cfg.sweep:
        raise ConfigError("sweep: the configuration has no sweep section")
    keys = list(cfg.sweep)
    return [dict(zip(keys, vals))
            for vals in itertools.product(*(cfg.sweep[k] for k in keys))]


def run_sweep(cfg, out=None, workers=None):
    """One aggregate row per grid point, written to ``sweep.csv``."""
    out = cfg.out if out is None else out
    _ensure_dir(out)
    points = sweep_points(cfg)
    keys = list(cfg.sweep)
    if any(k in ("spacing", "n_targets") for k in keys) and cfg.scenario.kind != "parallel":
        raise ConfigError("sweep: spacing and n_targets need scenario.kind 'parallel'")
    rows = []
    for point in points:
        scen = {k: v for k, v in point.items() if SWEEP_KEYS[k] == "scenario"}
        trk = {k: v for k, v in point.items() if SWEEP_KEYS[k] == "tracker"}
        sub = with_overrides(cfg, scenario=scen, tracker=trk)
        res = monte_carlo(sub, workers)
        row = dict(point)
        row.update(aggregate([r for r, _ in res]))
        rows.append(row)
    cols = keys + METRIC_COLUMNS[:-1]
    write_csv(os.path.join(out, "sweep.csv"), cols, rows)
    return rows
