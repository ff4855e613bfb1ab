"""Motion and measurement models for planar maneuvering targets.

States are ordered ``[x, vx, y, vy]``. Measurements are ``[range, azimuth]``
relative to the sensor origin, with azimuth measured as ``atan2(dy, dx)``.
All functions broadcast over leading batch dimensions.
"""

from dataclasses import dataclass, field

import numpy as np

N_X = 4
N_Y = 2


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class MotionModel:
    """Linear Gaussian transition ``x_k = F x_{k-1} + w``, ``w ~ N(0, Q)``."""

    name: str
    F: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if not np.all(np.isfinite(F)):
            raise ValueError("transition matrix must be finite")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("process noise must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("process noise must be positive semidefinite")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)


def cv_matrices(T, q_pos, q_vel, name="CV"):
    """Constant-velocity model with per-axis noise ``diag(q_pos, q_vel)``."""
    if T <= 0:
        raise ValueError("sampling period must be positive, got %r" % T)
    block = np.array([[1.0, T], [0.0, 1.0]])
    F = np.kron(np.eye(2), block)
    Q = np.kron(np.eye(2), np.diag([q_pos, q_vel]))
    return MotionModel(name, F, Q)


def ct_matrices(T, omega, Q_cv, name="CT", noise_scale=10.0):
    """Coordinated-turn model with known turn rate ``omega`` (rad/s).

    Process noise is ``noise_scale * Q_cv``. A zero turn rate is rejected;
    use :func:`cv_matrices` for straight motion.
    """
    if T <= 0:
        raise ValueError("sampling period must be positive, got %r" % T)
    if omega == 0:
        raise ValueError("turn rate must be non-zero; use the CV model instead")
    th = omega * T
    s, c = np.sin(th), np.cos(th)
    F = np.array([
        [1.0, s / omega, 0.0, (c - 1.0) / omega],
        [0.0, c, 0.0, -s],
        [0.0, (1.0 - c) / omega, 1.0, s / omega],
        [0.0, s, 0.0, c],
    ])
    return MotionModel(name, F, noise_scale * np.asarray(Q_cv, dtype=float))


class PolarSensor:
    """Range/azimuth sensor at ``origin`` with noise covariance ``R``."""

    angle_index = 1

    def __init__(self, R, origin=(0.0, 0.0)):
        R = np.asarray(R, dtype=float)
        if R.shape != (2, 2) or not np.allclose(R, R.T):
            raise ValueError("R must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        self.R = R
        self.origin = np.asarray(origin, dtype=float)

    def _relative(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] - self.origin[0], x[..., 2] - self.origin[1]

    def measure(self, x):
        dx, dy = self._relative(x)
        r = np.hypot(dx, dy)
        if np.any(r == 0):
            raise ValueError("state coincides with the sensor origin")
        return np.stack([r, np.arctan2(dy, dx)], axis=-1)

    def jacobian(self, x):
        dx, dy = self._relative(x)
        r2 = dx * dx + dy * dy
        if np.any(r2 == 0):
            raise ValueError("Jacobian undefined at zero range")
        r = np.sqrt(r2)
        H = np.zeros(np.shape(dx) + (2, 4))
        H[..., 0, 0] = dx / r
        H[..., 0, 2] = dy / r
        H[..., 1, 0] = -dy / r2
        H[..., 1, 2] = dx / r2
        return H

    def residual(self, a, b):
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        d[..., 1] = wrap_angle(d[..., 1])
        return d

    def to_cartesian(self, y):
        """Invert the noise-free measurement to a Cartesian position."""
        y = np.asarray(y, dtype=float)
        r, az = y[..., 0], y[..., 1]
        return np.stack([self.origin[0] + r * np.cos(az),
                         self.origin[1] + r * np.sin(az)], axis=-1)


class LinearSensor:
    """Linear measurement ``y = C x + v``; used as a surrogate in checks."""

    angle_index = None

    def __init__(self, C, R):
        self.C = np.asarray(C, dtype=float)
        self.R = np.asarray(R, dtype=float)

    def measure(self, x):
        return np.asarray(x, dtype=float) @ self.C.T

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.C, x.shape[:-1] + self.C.shape).copy()

    def residual(self, a, b):
        return np.asarray(a, dtype=float) - np.asarray(b, dtype=float)


def measure(state, sensor):
    """Noise-free measurement of ``state``."""
    return sensor.measure(state)


def measure_jacobian(state, sensor):
    return sensor.jacobian(state)


@dataclass
class Measurement:
    range: float
    azimuth: float

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("range must be positive")

    def as_array(self):
        return np.array([self.range, self.azimuth])


@dataclass
class MeasurementFrame:
    """All measurements of one scan.

    ``labels`` holds the generating target index for each row, or -1 for
    clutter. Trackers never read it; it exists for scoring only.
    """

    time: int
    z: np.ndarray
    labels: np.ndarray = field(default=None)
    clipped: np.ndarray = field(default=None)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(-1, N_Y)
        n = len(self.z)
        if self.labels is None:
            self.labels = np.full(n, -1, dtype=int)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.clipped is None:
            self.clipped = np.zeros(n, dtype=bool)

    def __len__(self):
        return len(self.z)
