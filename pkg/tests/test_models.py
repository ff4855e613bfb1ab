import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpmmtt.models import (MeasurementFrame, PolarSensor, ct_matrices, cv_matrices,
                           measure, measure_jacobian, wrap_angle)

SENSOR = PolarSensor(np.diag([400.0, 1e-6]))
TABLE1_STATES = np.array([
    [11400.0, 0.0, 10200.0, 120.0],
    [11300.0, 0.0, 10200.0, 120.0],
    [11750.0, -120.0, 11840.0, 0.0],
    [11750.0, -120.0, 11940.0, 0.0],
])


def fd_jacobian(x, eps=1e-3):
    J = np.zeros((2, 4))
    for i in range(4):
        d = np.zeros(4)
        d[i] = eps
        J[:, i] = (SENSOR.measure(x + d) - SENSOR.measure(x - d)) / (2 * eps)
    return J


class TestCV:
    def test_matrices(self):
        m = cv_matrices(1.0, 0.01, 0.005)
        np.testing.assert_array_equal(m.F, [[1, 1, 0, 0], [0, 1, 0, 0],
                                            [0, 0, 1, 1], [0, 0, 0, 1]])
        np.testing.assert_array_equal(m.Q, np.diag([0.01, 0.005, 0.01, 0.005]))

    def test_rejects_nonpositive_period(self):
        with pytest.raises(ValueError):
            cv_matrices(0.0, 0.01, 0.005)

    def test_zero_noise(self):
        m = cv_matrices(2.0, 0.0, 0.0)
        assert m.F[0, 1] == 2.0 and m.F[2, 3] == 2.0
        np.testing.assert_array_equal(m.Q, np.zeros((4, 4)))


class TestCT:
    def test_entries(self):
        m = ct_matrices(1.0, 0.087, cv_matrices(1.0, 0.01, 0.005).Q)
        assert m.F[0, 1] == pytest.approx(np.sin(0.087) / 0.087, abs=1e-12)
        assert m.F[0, 1] == pytest.approx(0.99874, abs=5e-6)
        assert m.F[1, 1] == pytest.approx(0.99622, abs=5e-6)
        np.testing.assert_allclose(m.Q, 10 * cv_matrices(1.0, 0.01, 0.005).Q)

    def test_small_turn_rate_limit(self):
        ct = ct_matrices(1.0, 1e-8, np.eye(4))
        np.testing.assert_allclose(ct.F, cv_matrices(1.0, 0, 0).F, atol=1e-5)

    def test_zero_turn_rate_rejected(self):
        with pytest.raises(ValueError):
            ct_matrices(1.0, 0.0, np.eye(4))

    def test_full_turn_restores_heading(self):
        omega = 0.087
        n = 2 * np.pi / omega
        F = ct_matrices(n, omega, np.zeros((4, 4))).F
        x = F @ np.array([0.0, 50.0, 0.0, 0.0])
        np.testing.assert_allclose(x[[1, 3]], [50.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(x[[0, 2]], [0.0, 0.0], atol=1e-6)

    @given(st.floats(0.01, 1.0), st.floats(0.1, 5.0))
    def test_velocity_rotation_preserves_speed(self, omega, T):
        F = ct_matrices(T, omega, np.zeros((4, 4))).F
        v = F @ np.array([0.0, 3.0, 0.0, 4.0])
        assert np.hypot(v[1], v[3]) == pytest.approx(5.0, rel=1e-12)

    @given(st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_noise_psd(self, omega, qp, qv):
        for m in (cv_matrices(1.0, qp, qv),
                  ct_matrices(1.0, omega, cv_matrices(1.0, qp, qv).Q)):
            np.testing.assert_allclose(m.Q, m.Q.T)
            assert np.linalg.eigvalsh(m.Q).min() >= 0


class TestMeasure:
    def test_table1_target(self):
        y = measure(TABLE1_STATES[0], SENSOR)
        assert y[0] == pytest.approx(15297.06, abs=0.01)
        # atan2(10200, 11400) evaluated to 30 digits with mpmath
        assert y[1] == pytest.approx(0.7298996581517315, abs=1e-12)

    def test_axis_and_345(self):
        assert SENSOR.measure([7.0, 0, 0.0, 0])[1] == 0.0
        assert SENSOR.measure([3.0, 1, 4.0, 1])[0] == pytest.approx(5.0)

    def test_zero_range(self):
        with pytest.raises(ValueError):
            SENSOR.measure(np.zeros(4))
        with pytest.raises(ValueError):
            SENSOR.jacobian(np.zeros(4))

    def test_offset_origin(self):
        s = PolarSensor(np.eye(2), origin=(100.0, 0.0))
        np.testing.assert_allclose(s.measure([100.0, 0, 50.0, 0]), [50.0, np.pi / 2])

    @given(st.floats(13000, 19000), st.floats(0.7, 1.0))
    def test_inverse_round_trip(self, r, az):
        p = SENSOR.to_cartesian(np.array([r, az]))
        y = SENSOR.measure(np.array([p[0], 0.0, p[1], 0.0]))
        np.testing.assert_allclose(y, [r, az], rtol=1e-9)

    def test_residual_wraps(self):
        d = SENSOR.residual(np.array([0.0, np.pi - 0.01]), np.array([0.0, -np.pi + 0.01]))
        assert d[1] == pytest.approx(-0.02)
        assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)


class TestJacobian:
    @pytest.mark.parametrize("x", TABLE1_STATES)
    def test_matches_finite_differences(self, x):
        np.testing.assert_allclose(measure_jacobian(x, SENSOR), fd_jacobian(x),
                                   rtol=1e-6, atol=1e-12)

    def test_velocity_columns_zero(self):
        H = SENSOR.jacobian(TABLE1_STATES)
        assert np.all(H[..., [1, 3]] == 0.0)

    def test_axis_aligned(self):
        H = SENSOR.jacobian(np.array([250.0, 0.0, 0.0, 0.0]))
        assert H[0, 0] == 1.0
        assert H[1, 2] == pytest.approx(1 / 250.0)

    @settings(max_examples=100)
    @given(st.floats(13000, 19000), st.floats(0.7, 1.0))
    def test_random_states(self, r, az):
        x = np.array([r * np.cos(az), 10.0, r * np.sin(az), -5.0])
        J, Jfd = SENSOR.jacobian(x), fd_jacobian(x)
        nz = np.abs(Jfd) > 1e-12
        assert np.max(np.abs(J[nz] - Jfd[nz]) / np.abs(Jfd[nz])) < 1e-5


def test_frame_defaults():
    f = MeasurementFrame(3, [[1.0, 0.1], [2.0, 0.2]])
    assert len(f) == 2
    assert np.all(f.labels == -1) and not f.clipped.any()
