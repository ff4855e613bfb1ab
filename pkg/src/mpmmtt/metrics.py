"""Track-quality metrics against labelled ground truth.

Estimates are scored per scan by OSPA over positions, and per track after
a track-to-target assignment: valid/false/broken track counts, detection
coverage, position and velocity errors, and the posterior error rates of
the model and association decisions.
"""

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


def ospa(est, truth, p=2.0, c=100.0, exhaustive_max=6):
    """Optimal subpattern assignment distance between two point sets.

    Small problems are solved by exhaustive search over assignments, larger
    ones with the Hungarian algorithm.
    """
    if p < 1 or c <= 0:
        raise ValueError("need p >= 1 and c > 0")
    X = np.asarray(est, dtype=float).reshape(-1, 2)
    Y = np.asarray(truth, dtype=float).reshape(-1, 2)
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(c)
    if m > n:
        X, Y, m, n = Y, X, n, m
    D = np.minimum(np.linalg.norm(X[:, None] - Y[None], axis=-1), c) ** p
    if m <= exhaustive_max and n <= 8:
        # fsum is correctly rounded, so the result does not depend on the
        # argument order
        best = min(math.fsum(D[i, j] for i, j in enumerate(perm))
                   for perm in itertools.permutations(range(n), m))
    else:
        r, col = linear_sum_assignment(D)
        best = math.fsum(D[r, col])
    return float(((best + c ** p * (n - m)) / n) ** (1.0 / p))


@dataclass
class TrackToTruthAssignment:
    """``target_of[track_id]`` is the matched target index or ``None``."""

    target_of: dict
    mean_error: dict

    @property
    def valid(self):
        return [t for t, g in self.target_of.items() if g is not None]

    @property
    def false(self):
        return [t for t, g in self.target_of.items() if g is None]


@dataclass
class MetricReport:
    NVT: float
    TPD: float
    NFT: float
    NTB: float
    MAER: float
    DAER: float
    AEE_P: float
    AEE_V: float
    MOSPA: float
    TET_s: float = 0.0

    def as_dict(self):
        return asdict(self)


def _by_track(estimates):
    out = {}
    for e in estimates:
        out.setdefault(e.track_id, {})[e.time] = e
    return out


def assign_tracks(estimates, truth, gate_distance=100.0, max_overlap=3):
    """Match tracks to targets by mean position error over shared scans.

    Pairs are taken in order of increasing mean error. A pair is accepted
    if the error is within ``gate_distance``, the track is still free and
    the target's already accepted tracks share at most ``max_overlap``
    scans with it; several time-disjoint tracks on one target count as
    breakages. Unmatched tracks are false.
    """
    tracks = _by_track(estimates)
    pairs = []
    mean_err = {}
    for tid, est in tracks.items():
        for n in range(truth.states.shape[0]):
            ts = [t for t in est if truth.alive[n, t - 1]]
            if not ts:
                continue
            err = np.mean([np.hypot(est[t].mean[0] - truth.states[n, t - 1, 0],
                                    est[t].mean[2] - truth.states[n, t - 1, 2])
                           for t in ts])
            mean_err[tid, n] = err
            if err <= gate_distance:
                pairs.append((err, tid, n))
    pairs.sort()
    target_of = {tid: None for tid in tracks}
    claimed = {}
    for err, tid, n in pairs:
        if target_of[tid] is not None:
            continue
        times = set(tracks[tid])
        if any(len(times & set(tracks[o])) > max_overlap for o in claimed.get(n, [])):
            continue
        target_of[tid] = n
        claimed.setdefault(n, []).append(tid)
    return TrackToTruthAssignment(target_of, mean_err)


def maer(model_probs, true_models):
    """Mean of ``1 - p(true model)`` over the supplied (track, scan) pairs."""
    P = np.asarray(model_probs, dtype=float).reshape(-1, np.shape(model_probs)[-1])
    idx = np.asarray(true_models, dtype=int).reshape(-1)
    if len(idx) == 0:
        return 0.0
    return float(np.mean(1.0 - P[np.arange(len(idx)), idx]))


def daer(assoc_rows, true_columns):
    """Mean of ``1 - a_hat[i, j*]`` where ``j*`` is the true column
    (0 when the target was missed)."""
    vals = [1.0 - float(row[j]) for row, j in zip(assoc_rows, true_columns)]
    return float(np.mean(vals)) if vals else 0.0


def true_column(frame, target):
    """Association column of ``target``'s detection in ``frame`` (0 if missed)."""
    hit = np.flatnonzero(frame.labels == target)
    return int(hit[0]) + 1 if len(hit) else 0


def ospa_series(estimates, truth, p=2.0, c=100.0):
    by_time = {}
    for e in estimates:
        by_time.setdefault(e.time, []).append(e.mean[[0, 2]])
    out = np.empty(truth.n_scans)
    for k in range(1, truth.n_scans + 1):
        _, pos = truth.positions(k)
        out[k - 1] = ospa(np.array(by_time.get(k, [])).reshape(-1, 2), pos, p, c)
    return out


def evaluate(estimates, truth, frames, gate_distance=100.0, p=2.0, c=100.0,
             elapsed=0.0):
    """Full report for one run plus per-scan series.

    Returns ``(MetricReport, series)`` where ``series`` maps ``"OSPA"``,
    ``"MAER"``, ``"DAER"`` and ``"N_est"`` to arrays over scans.
    """
    K = truth.n_scans
    frames = {f.time: f for f in frames}
    asg = assign_tracks(estimates, truth, gate_distance)
    tracks = _by_track(estimates)
    n_targets = truth.states.shape[0]
    covered = np.zeros((n_targets, K), dtype=bool)
    pos_err, vel_err, m_err, a_err = [], [], [], []
    m_series = [[] for _ in range(K)]
    a_series = [[] for _ in range(K)]
    for tid in asg.valid:
        n = asg.target_of[tid]
        for t, e in tracks[tid].items():
            if not truth.alive[n, t - 1]:
                continue
            covered[n, t - 1] = True
            x = truth.states[n, t - 1]
            pos_err.append(np.hypot(e.mean[0] - x[0], e.mean[2] - x[2]))
            vel_err.append(np.hypot(e.mean[1] - x[1], e.mean[3] - x[3]))
            me = 1.0 - e.model_probs[truth.models[n, t - 1]]
            ae = 1.0 - e.assoc_row[true_column(frames[t], n)]
            m_err.append(me)
            a_err.append(ae)
            m_series[t - 1].append(me)
            a_series[t - 1].append(ae)
    life = truth.alive.sum(axis=1)
    tpd = np.where(life > 0, covered.sum(axis=1) / np.maximum(life, 1), 0.0)
    ntb = sum(max(sum(1 for g in asg.target_of.values() if g == n) - 1, 0)
              for n in range(n_targets))
    series = {
        "OSPA": ospa_series(estimates, truth, p, c),
        "MAER": np.array([np.mean(v) if v else np.nan for v in m_series]),
        "DAER": np.array([np.mean(v) if v else np.nan for v in a_series]),
        "N_est": np.array([sum(1 for e in estimates if e.time == k)
                           for k in range(1, K + 1)], dtype=float),
    }
    report = MetricReport(
        NVT=float(len(asg.valid)),
        TPD=float(tpd.mean()) if n_targets else 1.0,
        NFT=float(len(asg.false)),
        NTB=float(ntb),
        MAER=float(np.mean(m_err)) if m_err else 0.0,
        DAER=float(np.mean(a_err)) if a_err else 0.0,
        AEE_P=float(np.mean(pos_err)) if pos_err else 0.0,
        AEE_V=float(np.mean(vel_err)) if vel_err else 0.0,
        MOSPA=float(series["OSPA"].mean()),
        TET_s=float(elapsed),
    )
    return report, series
