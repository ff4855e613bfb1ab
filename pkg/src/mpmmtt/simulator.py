"""Ground-truth trajectories and radar measurement frames.

Scans are numbered ``1..K``. A target is alive on an inclusive interval
``[birth, death]`` and follows a piecewise schedule of motion models; its
state at the birth scan is given and later states are propagated through
the scheduled model.
"""

from dataclasses import dataclass, field

import numpy as np

from .models import (MeasurementFrame, PolarSensor, ct_matrices, cv_matrices,
                     wrap_angle)

# (x, vx, y, vy), alive interval, schedule of (model, first, last)
TABLE1_TARGETS = [
    ((11400.0, 0.0, 10200.0, 120.0), (1, 30),
     [("CV", 1, 10), ("CT", 11, 20), ("CV", 21, 30)]),
    ((11300.0, 0.0, 10200.0, 120.0), (1, 30),
     [("CV", 1, 10), ("CT", 11, 20), ("CV", 21, 30)]),
    ((11750.0, -120.0, 11840.0, 0.0), (11, 40),
     [("CV", 11, 20), ("CT", 21, 30), ("CV", 31, 40)]),
    ((11750.0, -120.0, 11940.0, 0.0), (11, 40),
     [("CV", 11, 20), ("CT", 21, 30), ("CV", 31, 40)]),
]


@dataclass
class TargetSpec:
    initial: tuple
    birth: int
    death: int
    schedule: list

    def __post_init__(self):
        self.initial = tuple(float(v) for v in self.initial)
        self.schedule = [(str(m), int(a), int(b)) for m, a, b in self.schedule]
        if self.death < self.birth:
            raise ValueError("death precedes birth")
        t = self.birth
        for name, a, b in sorted(self.schedule, key=lambda s: s[1]):
            if a != t or b < a:
                raise ValueError("model schedule must partition [%d, %d]; gap or "
                                 "overlap at scan %d" % (self.birth, self.death, t))
            t = b + 1
        if t != self.death + 1:
            raise ValueError("model schedule ends at %d, lifetime ends at %d"
                             % (t - 1, self.death))

    def model_at(self, k):
        for name, a, b in self.schedule:
            if a <= k <= b:
                return name
        return None


@dataclass
class ScenarioSpec:
    """Targets, surveillance region, sensor and clutter settings.

    ``clutter_density`` is per unit of measurement space (m * rad); the
    expected clutter count per scan is ``clutter_density * volume`` unless
    ``clutter_rate`` overrides it.
    """

    targets: list = field(default_factory=list)
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

    def __post_init__(self):
        self.targets = [t if isinstance(t, TargetSpec) else TargetSpec(**t)
                        for t in self.targets]
        if not self.range_bounds[0] < self.range_bounds[1]:
            raise ValueError("range bounds must be increasing")
        if not self.azimuth_bounds[0] < self.azimuth_bounds[1]:
            raise ValueError("azimuth bounds must be increasing")
        if not 0.0 <= self.P_d <= 1.0:
            raise ValueError("P_d must lie in [0, 1]")
        for t in self.targets:
            if t.birth < 1 or t.death > self.n_scans:
                raise ValueError("target lifetime outside scans 1..%d" % self.n_scans)

    @property
    def volume(self):
        return ((self.range_bounds[1] - self.range_bounds[0])
                * (self.azimuth_bounds[1] - self.azimuth_bounds[0]))

    @property
    def expected_clutter(self):
        if self.clutter_rate is not None:
            return self.clutter_rate
        return self.clutter_density * self.volume

    def motion_models(self):
        cv = cv_matrices(self.T, self.q_pos, self.q_vel)
        ct = ct_matrices(self.T, self.omega, cv.Q, noise_scale=self.ct_noise_scale)
        return {"CV": cv, "CT": ct}

    def sensor(self):
        return PolarSensor(np.diag(self.R))


def table1_scenario(**overrides):
    """Four closely spaced maneuvering targets over 40 scans."""
    targets = [TargetSpec(x0, life[0], life[1], sched)
               for x0, life, sched in TABLE1_TARGETS]
    return ScenarioSpec(targets=targets, **overrides)


def parallel_scenario(n_targets=4, spacing=100.0, n_scans=40, **overrides):
    """Targets on parallel tracks ``spacing`` metres apart, all alive
    throughout and switching CV -> CT -> CV at thirds of the run."""
    a = n_scans // 3
    b = 2 * n_scans // 3
    sched = [("CV", 1, a), ("CT", a + 1, b), ("CV", b + 1, n_scans)]
    targets = [TargetSpec((11400.0 - i * spacing, 0.0, 10200.0, 120.0), 1,
                          n_scans, sched) for i in range(n_targets)]
    return ScenarioSpec(targets=targets, n_scans=n_scans, **overrides)


@dataclass
class GroundTruth:
    """``states[n, k-1]`` is the state of target ``n`` at scan ``k`` (NaN when
    not alive); ``models[n, k-1]`` its model name index or -1."""

    states: np.ndarray
    alive: np.ndarray
    models: np.ndarray
    model_names: tuple

    @property
    def n_scans(self):
        return self.states.shape[1]

    def positions(self, k):
        idx = np.flatnonzero(self.alive[:, k - 1])
        return idx, self.states[idx, k - 1][:, [0, 2]]


def generate_truth(spec, rng=None):
    """Propagate every target through its model schedule."""
    rng = np.random.default_rng(rng)
    mods = spec.motion_models()
    names = tuple(mods)
    N, K = len(spec.targets), spec.n_scans
    states = np.full((N, K, 4), np.nan)
    alive = np.zeros((N, K), dtype=bool)
    models = np.full((N, K), -1, dtype=int)
    for n, tgt in enumerate(spec.targets):
        x = np.array(tgt.initial)
        for k in range(tgt.birth, tgt.death + 1):
            name = tgt.model_at(k)
            if k > tgt.birth:
                m = mods[name]
                x = m.F @ x
                if spec.process_noise:
                    x = x + rng.multivariate_normal(np.zeros(4), m.Q)
            states[n, k - 1] = x
            alive[n, k - 1] = True
            models[n, k - 1] = names.index(name)
    return GroundTruth(states, alive, models, names)


def generate_frame(truth, k, spec, sensor, rng):
    """Detections of alive targets at scan ``k`` plus uniform clutter.

    Detections falling outside the region are clipped to its boundary and
    flagged in ``frame.clipped``. Rows are shuffled so the order carries no
    information about their origin.
    """
    rlo, rhi = spec.range_bounds
    alo, ahi = spec.azimuth_bounds
    zs, labels = [], []
    for n in np.flatnonzero(truth.alive[:, k - 1]):
        if rng.random() < spec.P_d:
            y = sensor.measure(truth.states[n, k - 1])
            y = y + rng.multivariate_normal(np.zeros(2), sensor.R)
            y[1] = wrap_angle(y[1])
            zs.append(y)
            labels.append(n)
    n_c = rng.poisson(spec.expected_clutter)
    for _ in range(n_c):
        zs.append(np.array([rng.uniform(rlo, rhi), rng.uniform(alo, ahi)]))
        labels.append(-1)
    z = np.array(zs).reshape(-1, 2)
    labels = np.array(labels, dtype=int)
    lo, hi = np.array([rlo, alo]), np.array([rhi, ahi])
    clipped = np.any((z < lo) | (z > hi), axis=1)
    z = np.clip(z, lo, hi)
    perm = rng.permutation(len(z))
    return MeasurementFrame(k, z[perm], labels[perm], clipped[perm])


def simulate(spec, seed):
    """Truth and all frames for one Monte Carlo run."""
    rng = np.random.default_rng(seed)
    truth = generate_truth(spec, rng)
    sensor = spec.sensor()
    frames = [generate_frame(truth, k, spec, sensor, rng)
              for k in range(1, spec.n_scans + 1)]
    return truth, frames
