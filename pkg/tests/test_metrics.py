import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpmmtt.association import build_weights, enumerate_marginals
from mpmmtt.metrics import assign_tracks, daer, evaluate, maer, ospa, true_column
from mpmmtt.models import MeasurementFrame
from mpmmtt.simulator import generate_truth, simulate, table1_scenario
from mpmmtt.tracker import TrackEstimate


def _sets(rng, k):
    return [rng.uniform(-150, 150, size=(rng.integers(0, 5), 2)) for _ in range(k)]


class TestOSPA:
    def test_known_values(self):
        assert ospa([[0.0, 0.0]], [[30.0, 40.0]]) == pytest.approx(50.0)
        pts = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert ospa(pts, pts) == 0.0
        assert ospa(np.empty((0, 2)), pts, c=100.0) == 100.0
        assert ospa(np.empty((0, 2)), np.empty((0, 2))) == 0.0

    def test_cutoff_and_cardinality(self):
        assert ospa([[0.0, 0.0]], [[500.0, 0.0]]) == pytest.approx(100.0)
        # one perfect match, one missing point: sqrt(c^2 / 2)
        assert ospa([[0.0, 0.0]], [[0.0, 0.0], [9.0, 9.0]]) == pytest.approx(100 / np.sqrt(2))

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            ospa([[0, 0]], [[1, 1]], p=0.5)
        with pytest.raises(ValueError):
            ospa([[0, 0]], [[1, 1]], c=0.0)

    def test_axioms_random_triples(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            X, Y, Z = _sets(rng, 3)
            assert ospa(X, Y) == ospa(Y, X)
            assert ospa(X, Z) <= ospa(X, Y) + ospa(Y, Z) + 1e-12

    def test_hungarian_matches_exhaustive(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            X, Y = rng.uniform(0, 200, (5, 2)), rng.uniform(0, 200, (6, 2))
            assert ospa(X, Y, exhaustive_max=0) == pytest.approx(ospa(X, Y), abs=1e-9)

    @settings(max_examples=50)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(1.0, 200.0), st.floats(0.0, 200.0))
    def test_non_decreasing_in_cutoff(self, seed, c, dc):
        X, Y = _sets(np.random.default_rng(seed), 2)
        assert ospa(X, Y, c=c) <= ospa(X, Y, c=c + dc) + 1e-12

    @settings(max_examples=50)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_bounded(self, seed):
        X, Y = _sets(np.random.default_rng(seed), 2)
        assert 0.0 <= ospa(X, Y) <= 100.0


def perfect_estimates(truth, ids=None, shift=0.0):
    out = []
    for n in range(truth.states.shape[0]):
        for k in np.flatnonzero(truth.alive[n]) + 1:
            x = truth.states[n, k - 1].copy()
            x[0] += shift
            pm = np.eye(2)[truth.models[n, k - 1]]
            tid = n if ids is None else ids(n, k)
            out.append(TrackEstimate(tid, int(k), x, np.eye(4), pm, 1.0, None))
    return out


class TestAssignment:
    def test_perfect_output(self):
        truth = generate_truth(table1_scenario())
        asg = assign_tracks(perfect_estimates(truth), truth)
        assert len(asg.valid) == 4 and not asg.false

    def test_sequential_tracks_count_as_break(self):
        truth, frames = simulate(table1_scenario(P_d=1.0, clutter_density=0.0), 0)
        est = perfect_estimates(truth, ids=lambda n, k: 10 + n if n == 0 and k > 15 else n)
        for e in est:
            e.assoc_row = np.eye(len(frames[e.time - 1]) + 1)[
                true_column(frames[e.time - 1], e.track_id % 10)]
        rep, _ = evaluate(est, truth, frames)
        assert rep.NVT == 5 and rep.NTB == 1 and rep.NFT == 0
        assert rep.TPD == 1.0 and rep.MAER == 0.0 and rep.DAER == 0.0
        assert rep.AEE_P == 0.0 and rep.MOSPA == 0.0

    def test_far_track_is_false(self):
        truth = generate_truth(table1_scenario())
        est = perfect_estimates(truth)
        est += [TrackEstimate(99, k, np.array([17000.0, 0, 14000.0, 0]), np.eye(4),
                              np.array([0.5, 0.5]), 1.0, None) for k in range(1, 6)]
        asg = assign_tracks(est, truth)
        assert asg.target_of[99] is None and len(asg.valid) == 4

    def test_partial_coverage(self):
        truth, frames = simulate(table1_scenario(P_d=1.0, clutter_density=0.0), 0)
        est = [e for e in perfect_estimates(truth) if not (e.track_id == 0 and e.time > 15)]
        for e in est:
            e.assoc_row = np.ones(len(frames[e.time - 1]) + 1)
        rep, _ = evaluate(est, truth, frames)
        assert rep.TPD == pytest.approx((0.5 + 3) / 4)
        assert rep.NVT + rep.NFT == len({e.track_id for e in est})


class TestRates:
    def test_maer_examples(self):
        assert maer([[1.0, 0.0], [0.0, 1.0]], [0, 1]) == 0.0
        assert maer(np.full((7, 2), 0.5), np.zeros(7)) == pytest.approx(0.5)

    def test_maer_random_recomputed(self):
        rng = np.random.default_rng(3)
        P = rng.dirichlet([1, 1], size=50)
        idx = rng.integers(0, 2, 50)
        manual = sum(1 - P[i, idx[i]] for i in range(50)) / 50
        assert maer(P, idx) == pytest.approx(manual, abs=1e-12)

    def test_daer_examples(self):
        rows = [np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0])]
        assert daer(rows, [1, 0]) == 0.0
        rows = [np.array([0.05, 0.9, 0.05])] * 6
        assert daer(rows, [1] * 6) == pytest.approx(0.1)

    def test_daer_against_enumeration(self, ):
        sensor = table1_scenario().sensor()
        truth = generate_truth(table1_scenario())
        x = truth.states[:2, 4]
        rng = np.random.default_rng(4)
        z = np.array([sensor.measure(x[1]), sensor.measure(x[0]), [15000.0, 0.8]])
        z[:2] += rng.multivariate_normal(np.zeros(2), sensor.R, size=2)
        frame = MeasurementFrame(5, z, np.array([1, 0, -1]))
        S = np.broadcast_to(sensor.R + np.diag([200.0, 2e-6]), (2, 1, 2, 2))
        w = build_weights([0.9, 0.9], x, np.tile(np.eye(4), (2, 1, 1)),
                          np.ones((2, 1)), S, z, sensor, volume=1800)
        A = enumerate_marginals(w).a_hat
        cols = [true_column(frame, 0), true_column(frame, 1)]
        assert cols == [2, 1]
        manual = ((1 - A[1, 2]) + (1 - A[2, 1])) / 2
        assert daer([A[1], A[2]], cols) == pytest.approx(manual, abs=1e-9)
