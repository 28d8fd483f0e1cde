"""Eleven-state drone process model.

State layout (ENU, SI units)::

    0:3  position rho      3:6  velocity nu      6:9  acceleration a
    9    yaw theta         10   yaw rate r

The transition is linear; accelerations and yaw rate are re-injected from
the IMU every step through the input vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fieldekf.filter import ProcessModel, floor_covariance

N_STATE = 11
POS = slice(0, 3)
VEL = slice(3, 6)
ACC = slice(6, 9)
YAW = 9
YAW_RATE = 10
GRAVITY = 9.80665


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return wrapped if wrapped.ndim else float(wrapped)


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class DroneState:
    rho: np.ndarray
    nu: np.ndarray
    a: np.ndarray
    theta: float
    r: float

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).reshape(3)
        self.nu = np.asarray(self.nu, dtype=float).reshape(3)
        self.a = np.asarray(self.a, dtype=float).reshape(3)
        self.theta = wrap_angle(float(self.theta))
        self.r = float(self.r)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.nu, self.a, [self.theta, self.r]])

    @classmethod
    def from_vector(cls, x) -> "DroneState":
        x = np.asarray(x, dtype=float)
        return cls(x[POS], x[VEL], x[ACC], x[YAW], x[YAW_RATE])


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: np.ndarray  # specific force in the IMU frame
    gyro_z: float


@dataclass(frozen=True)
class NoiseDensities:
    """Accelerometer / gyroscope noise and random-walk densities."""

    sigma_a: float = 1.6e-2
    g_a: float = 1.94e-3
    sigma_b: float = 1.31e-4
    g_b: float = 3.96e-5

    def __post_init__(self):
        for name in ("sigma_a", "g_a", "sigma_b", "g_b"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def transition_matrix(dt: float) -> np.ndarray:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    A = np.zeros((N_STATE, N_STATE))
    A[POS, POS] = np.eye(3)
    A[POS, VEL] = dt * np.eye(3)
    A[VEL, VEL] = np.eye(3)
    A[VEL, ACC] = dt * np.eye(3)
    A[YAW, YAW] = 1.0
    A[YAW, YAW_RATE] = dt
    return A


def propagate(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """A x + u with the yaw wrapped."""
    out = transition_matrix(dt) @ np.asarray(x, dtype=float) + np.asarray(u, dtype=float)
    out[YAW] = wrap_angle(out[YAW])
    return out


def build_Q(dens: NoiseDensities, dt: float, floor: bool = True) -> np.ndarray:
    """Diagonal Q: sigma_a^2 dt on velocity, g_a^2 dt on yaw rate, zero elsewhere."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    d = np.zeros(N_STATE)
    d[VEL] = dens.sigma_a**2 * dt
    d[YAW_RATE] = dens.g_a**2 * dt
    Q = np.diag(d)
    return floor_covariance(Q, dt) if floor else Q


def process_model(dens: NoiseDensities, dt: float) -> ProcessModel:
    A = transition_matrix(dt)

    def f(x, u):
        out = A @ x + u
        out[YAW] = wrap_angle(out[YAW])
        return out

    return ProcessModel(f=f, F=lambda x: A, Q=build_Q(dens, dt), dt=dt)


@dataclass
class InputResult:
    u: np.ndarray
    stale: bool
    count: int


def window_mean(t: np.ndarray, values: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """Time average over [t0, t1] of the piecewise-linear signal through the samples.

    The signal is held constant before the first and after the last sample.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float).reshape(len(t), -1)
    if len(t) == 1:
        return values[0].copy()
    if t1 <= t0:
        raise ValueError("empty averaging window")
    knots = np.concatenate([[t0], t, [t1]])
    vals = np.vstack([values[:1], values, values[-1:]])
    dt = np.diff(knots)
    return (0.5 * (vals[1:] + vals[:-1]) * dt[:, None]).sum(axis=0) / (t1 - t0)


def build_input(samples, theta_hat: float, t_prev: float, t_now: float, yaw_source=None) -> InputResult:
    """Input vector from the IMU samples in (t_prev, t_now].

    Specific force is rotated from the IMU frame to ENU by the yaw estimate
    (zero pitch and roll) and gravity is removed from the vertical channel.
    ``yaw_source`` may give a per-sample yaw to use instead of ``theta_hat``.
    """
    u = np.zeros(N_STATE)
    if isinstance(samples, dict):
        t = np.asarray(samples["t"], dtype=float)
        acc = np.asarray(samples["accel"], dtype=float).reshape(-1, 3)
        gz = np.asarray(samples["gyro_z"], dtype=float)
    else:
        samples = list(samples)
        t = np.array([s.t for s in samples], dtype=float)
        acc = np.array([s.accel for s in samples], dtype=float).reshape(-1, 3)
        gz = np.array([s.gyro_z for s in samples], dtype=float)
    if t.size and np.any(np.diff(t) <= 0):
        raise ValueError("IMU timestamps are not strictly increasing")
    sel = (t > t_prev) & (t <= t_now)
    if not sel.any():
        return InputResult(u, stale=True, count=0)
    t, acc, gz = t[sel], acc[sel], gz[sel]
    if yaw_source is None:
        R = rotation(theta_hat)
        enu_xy = acc[:, :2] @ R.T
    else:
        yaws = np.asarray(yaw_source, dtype=float)[sel]
        c, s = np.cos(yaws), np.sin(yaws)
        enu_xy = np.stack([c * acc[:, 0] - s * acc[:, 1], s * acc[:, 0] + c * acc[:, 1]], axis=1)
    enu = np.column_stack([enu_xy, acc[:, 2] - GRAVITY])
    u[ACC] = window_mean(t, enu, t_prev, t_now)
    u[YAW_RATE] = window_mean(t, gz[:, None], t_prev, t_now)[0]
    return InputResult(u, stale=False, count=int(sel.sum()))
